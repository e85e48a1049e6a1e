import numpy as np
import pytest

from meshsplat.encoding import Encoding, positional_encoding
from meshsplat.errors import ShapeMismatch
from meshsplat.fields import (apply_df, df_query, make_hover_field,
                              make_time_field, rdf_query)
from meshsplat.gradcheck import check_df_path, check_mlp, check_rdf_path
from meshsplat.mlp import MlpNetwork, make_mlp, mlp_backward, mlp_forward


class TestEncoding:
    def test_zero_input(self):
        out = positional_encoding(np.array([[0.0]]), Encoding(2))
        assert np.allclose(out, [[0, 0, 1, 0, 1]])

    def test_k0_at_one(self):
        out = positional_encoding(np.array([[1.0]]), Encoding(1))
        assert abs(out[0, 1] - np.sin(np.pi)) < 1e-12
        assert abs(out[0, 2] - (-1.0)) < 1e-12

    def test_l0_identity_passthrough(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        out = positional_encoding(x, Encoding(0))
        assert np.array_equal(out, x)

    def test_band0_periodicity(self):
        # sin/cos of pi*x are 2-periodic in x
        enc = Encoding(1, include_input=False)
        x = np.random.default_rng(1).normal(size=(5, 2))
        a = positional_encoding(x, enc)
        b = positional_encoding(x + 2.0, enc)
        assert np.abs(a - b).max() < 1e-9


class TestMlp:
    def test_zero_weights_output_is_bias(self):
        net = make_mlp(3, 2, hidden=8, depth=8, zero_head=True)
        net.biases[-1][:] = [0.3, -0.7]
        out, _ = mlp_forward(net, np.random.default_rng(2).normal(size=(4, 3)))
        assert np.abs(out - np.array([0.3, -0.7])).max() < 1e-12

    def test_identity_configured_single_layer(self):
        net = MlpNetwork([np.eye(3)], [np.zeros(3)], skip=())
        x = np.abs(np.random.default_rng(3).normal(size=(4, 3)))  # ReLU-safe
        # depth 0 means the "hidden" stack is empty and the head is linear
        out, _ = mlp_forward(net, x)
        assert np.abs(out - x).max() < 1e-12

    def test_matches_naive_chain(self):
        rng = np.random.default_rng(4)
        net = make_mlp(5, 3, hidden=16, depth=8, rng=rng, zero_head=False)
        x = rng.normal(size=(6, 5))
        out, _ = mlp_forward(net, x)
        h = x
        for i in range(8):
            if i == 3:
                h = np.concatenate([h, x], axis=1)
            h = np.maximum(h @ net.weights[i] + net.biases[i], 0.0)
        ref = h @ net.weights[-1] + net.biases[-1]
        assert np.abs(out - ref).max() < 1e-6

    def test_shape_mismatch(self):
        net = make_mlp(5, 3, hidden=8, depth=2)
        with pytest.raises(ShapeMismatch):
            mlp_forward(net, np.zeros((2, 4)))

    def test_zero_upstream_grad(self):
        rng = np.random.default_rng(5)
        net = make_mlp(4, 2, hidden=8, depth=3, rng=rng, zero_head=False)
        out, cache = mlp_forward(net, rng.normal(size=(3, 4)))
        grads, dx = mlp_backward(net, cache, np.zeros_like(out))
        assert not np.any(dx)
        assert not any(np.any(g) for g in grads)

    def test_hand_chain_rule_two_weight_net(self):
        # scalar net y = w2 * relu(w1 * x); loss = (y - t)^2
        w1, w2, x, t = 1.3, -0.8, 0.9, 0.5
        net = MlpNetwork([np.array([[w1]]), np.array([[w2]])],
                         [np.zeros(1), np.zeros(1)], skip=())
        out, cache = mlp_forward(net, np.array([[x]]))
        y = float(out[0, 0])
        grads, _ = mlp_backward(net, cache, np.array([[2 * (y - t)]]))
        assert abs(grads[0][0, 0] - 2 * (y - t) * w2 * x) < 1e-12
        assert abs(grads[2][0, 0] - 2 * (y - t) * w1 * x) < 1e-12

    def test_finite_differences(self):
        assert check_mlp(0) <= 1e-3

    def test_batch_order_independence(self):
        rng = np.random.default_rng(6)
        net = make_mlp(4, 2, hidden=8, depth=3, rng=rng, zero_head=False)
        x = rng.normal(size=(5, 4))
        out, _ = mlp_forward(net, x)
        out_rev, _ = mlp_forward(net, x[::-1].copy())
        assert np.abs(out - out_rev[::-1]).max() == 0


class TestDeformationHeads:
    def test_zero_head_is_identity(self):
        field = make_time_field(1, hidden=16, depth=8)
        d, _ = df_query(field, np.random.default_rng(7).normal(size=(5, 3)), 0.3)
        assert all(not np.any(v) for v in d.values())

    def test_delta_quat_zero_keeps_rotation(self):
        rng = np.random.default_rng(8)
        params = {"mu": rng.normal(size=(3, 3)), "quat": rng.normal(size=(3, 4)),
                  "log_scale": rng.normal(size=(3, 3)),
                  "opacity_logit": rng.normal(size=3),
                  "sh": rng.normal(size=(3, 1, 3))}
        zeros = {"mu": np.zeros((3, 3)), "quat": np.zeros((3, 4)),
                 "log_scale": np.zeros((3, 3)), "opacity_logit": np.zeros(3),
                 "sh": np.zeros((3, 1, 3))}
        out, _ = apply_df(params, zeros)
        for k in params:
            assert np.abs(out[k] - params[k]).max() < 1e-12

    def test_rdf_zero_head(self):
        field = make_hover_field(hidden=16, depth=8)
        rng = np.random.default_rng(9)
        da, dm, _ = rdf_query(field, rng.normal(size=(4, 3)),
                              rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3)))
        assert not np.any(da) and not np.any(dm)
        assert da.shape == (4, 3) and dm.shape == (4, 3)

    def test_df_path_finite_differences(self):
        assert check_df_path(0) <= 1e-3

    def test_rdf_path_finite_differences(self):
        assert check_rdf_path(0) <= 1e-3
