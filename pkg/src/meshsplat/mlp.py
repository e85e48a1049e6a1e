"""Dense ReLU network with a mid-network input re-injection, trained by
hand-written reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass
class MlpNetwork:
    """`depth` hidden ReLU layers plus a linear head.

    weights[i] has shape (fan_in, fan_out). At every index in `skip`, the raw
    network input is concatenated onto the running activation before that
    layer's matmul (index 3 = the fourth hidden layer).
    """

    weights: list
    biases: list
    skip: tuple = (3,)

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.skip)


def make_mlp(in_dim: int, out_dim: int, hidden: int = 256, depth: int = 8,
             skip: tuple = (3,), rng: np.random.Generator | None = None,
             zero_head: bool = True) -> MlpNetwork:
    """He-initialized hidden layers; the linear head starts at zero so the
    network is exactly the zero map at construction."""
    rng = rng or np.random.default_rng(0)
    weights, biases = [], []
    fan_in = in_dim
    for i in range(depth):
        if i in skip:
            fan_in += in_dim
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, hidden))
        weights.append(w)
        biases.append(np.zeros(hidden))
        fan_in = hidden
    if zero_head:
        weights.append(np.zeros((fan_in, out_dim)))
    else:
        weights.append(rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, out_dim)))
    biases.append(np.zeros(out_dim))
    return MlpNetwork(weights, biases, tuple(skip))


def mlp_forward(net: MlpNetwork, x: np.ndarray):
    """Returns (output, cache) for a batch (B, in_dim)."""
    x = np.atleast_2d(np.asarray(x, float))
    if x.shape[1] != net.in_dim:
        raise ShapeMismatch(f"input width {x.shape[1]}, network expects {net.in_dim}")
    h = x
    layer_inputs = []
    relu_masks = []
    for i in range(net.depth):
        if i in net.skip:
            h = np.concatenate([h, x], axis=1)
        if h.shape[1] != net.weights[i].shape[0]:
            raise ShapeMismatch(f"layer {i}: activation width {h.shape[1]} vs "
                                f"weight fan-in {net.weights[i].shape[0]}")
        layer_inputs.append(h)
        z = h @ net.weights[i] + net.biases[i]
        mask = z > 0.0
        relu_masks.append(mask)
        h = np.where(mask, z, 0.0)
    layer_inputs.append(h)
    out = h @ net.weights[-1] + net.biases[-1]
    return out, (x, layer_inputs, relu_masks)


def mlp_backward(net: MlpNetwork, cache, d_out: np.ndarray):
    """VJP: returns (grads, d_input) where grads aligns with net.parameters()."""
    x, layer_inputs, relu_masks = cache
    d_out = np.atleast_2d(np.asarray(d_out, float))
    gw = [None] * (net.depth + 1)
    gb = [None] * (net.depth + 1)

    h = layer_inputs[-1]
    gw[-1] = h.T @ d_out
    gb[-1] = d_out.sum(axis=0)
    dh = d_out @ net.weights[-1].T
    dx = np.zeros_like(x)
    for i in range(net.depth - 1, -1, -1):
        dz = dh * relu_masks[i]
        gw[i] = layer_inputs[i].T @ dz
        gb[i] = dz.sum(axis=0)
        dh = dz @ net.weights[i].T
        if i in net.skip:
            dx += dh[:, -x.shape[1]:]
            dh = dh[:, : -x.shape[1]]
    dx += dh
    grads = []
    for w, b in zip(gw, gb):
        grads.append(w)
        grads.append(b)
    return grads, dx
