"""Sinusoidal frequency encoding for field-network inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Encoding:
    num_frequencies: int
    include_input: bool = True

    def out_dim(self, in_dim: int) -> int:
        per = 2 * self.num_frequencies + (1 if self.include_input else 0)
        return in_dim * per


def positional_encoding(x: np.ndarray, enc: Encoding) -> np.ndarray:
    """Per input scalar: [x, sin(2^k pi x), cos(2^k pi x)], k ascending.

    Input (B, D) -> (B, D * (include + 2L)), dimension-major blocks.
    """
    x = np.atleast_2d(np.asarray(x, float))
    b, d = x.shape
    L = enc.num_frequencies
    per = 2 * L + (1 if enc.include_input else 0)
    out = np.empty((b, d, per))
    col = 0
    if enc.include_input:
        out[:, :, 0] = x
        col = 1
    for k in range(L):
        f = (2.0**k) * np.pi
        out[:, :, col] = np.sin(f * x)
        out[:, :, col + 1] = np.cos(f * x)
        col += 2
    return out.reshape(b, d * per)


def positional_encoding_backward(x: np.ndarray, enc: Encoding, dfeat: np.ndarray) -> np.ndarray:
    """VJP of positional_encoding back to the raw input."""
    x = np.atleast_2d(np.asarray(x, float))
    b, d = x.shape
    L = enc.num_frequencies
    per = 2 * L + (1 if enc.include_input else 0)
    g = np.asarray(dfeat, float).reshape(b, d, per)
    dx = np.zeros_like(x)
    col = 0
    if enc.include_input:
        dx += g[:, :, 0]
        col = 1
    for k in range(L):
        f = (2.0**k) * np.pi
        dx += g[:, :, col] * f * np.cos(f * x)
        dx += g[:, :, col + 1] * (-f) * np.sin(f * x)
        col += 2
    return dx
