"""Time-conditioned and mesh-conditioned deformation heads.

Two heads share the dense-network machinery:

* the time field maps (encoded rest position, encoded timestamp) to
  per-Gaussian parameter deltas, applied additively in each parameter's
  unconstrained form and multiplicatively (quaternion product) for rotation;
* the hover field maps (encoded rest facet centroid, encoded deformed facet
  vertices, placement logits) to placement/position offsets.

Both are constructed with a zero head so they start as exact identity
deformations; `make_*` asserts that property.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh as shlib
from .encoding import Encoding, positional_encoding, positional_encoding_backward
from .geom import normalize, normalize_backward, quat_mul, quat_mul_backward
from .mlp import MlpNetwork, make_mlp, mlp_backward, mlp_forward

SPATIAL_FREQS = 10
TEMPORAL_FREQS = 6


@dataclass
class TimeField:
    """Per-Gaussian deformation as a function of rest position and time."""

    net: MlpNetwork
    spatial: Encoding
    temporal: Encoding
    sh_coeffs: int

    @property
    def out_dim(self) -> int:
        return 3 + 4 + 3 + 1 + 3 * self.sh_coeffs


def make_time_field(sh_coeffs: int, hidden: int = 256, depth: int = 8,
                    spatial_freqs: int = SPATIAL_FREQS,
                    temporal_freqs: int = TEMPORAL_FREQS,
                    rng: np.random.Generator | None = None) -> TimeField:
    spatial = Encoding(spatial_freqs)
    temporal = Encoding(temporal_freqs)
    in_dim = spatial.out_dim(3) + temporal.out_dim(1)
    out_dim = 3 + 4 + 3 + 1 + 3 * sh_coeffs
    net = make_mlp(in_dim, out_dim, hidden, depth, rng=rng, zero_head=True)
    field = TimeField(net, spatial, temporal, sh_coeffs)
    d, _ = df_query(field, np.zeros((1, 3)), 0.5)
    if any(np.any(v) for v in d.values()):
        raise AssertionError("freshly built time field is not the identity")
    return field


def df_query(field: TimeField, mu: np.ndarray, t: float):
    """Deltas for rest positions (N,3) at timestamp t. Returns (deltas, cache)."""
    mu = np.atleast_2d(np.asarray(mu, float))
    n = mu.shape[0]
    ep = positional_encoding(mu, field.spatial)
    et = positional_encoding(np.full((n, 1), float(t)), field.temporal)
    x = np.concatenate([ep, et], axis=1)
    raw, mcache = mlp_forward(field.net, x)
    k = field.sh_coeffs
    deltas = {
        "mu": raw[:, 0:3],
        "quat": raw[:, 3:7],
        "log_scale": raw[:, 7:10],
        "opacity_logit": raw[:, 10],
        "sh": raw[:, 11:11 + 3 * k].reshape(n, k, 3),
    }
    return deltas, (mu, ep.shape[1], mcache)


def df_query_backward(field: TimeField, cache, d_deltas: dict):
    """VJP: returns (net grads aligned with net.parameters(), d_mu)."""
    mu, ep_width, mcache = cache
    n = mu.shape[0]
    k = field.sh_coeffs
    d_raw = np.zeros((n, field.out_dim))
    d_raw[:, 0:3] = d_deltas.get("mu", 0.0)
    d_raw[:, 3:7] = d_deltas.get("quat", 0.0)
    d_raw[:, 7:10] = d_deltas.get("log_scale", 0.0)
    d_raw[:, 10] = d_deltas.get("opacity_logit", 0.0)
    if "sh" in d_deltas:
        d_raw[:, 11:11 + 3 * k] = np.reshape(d_deltas["sh"], (n, 3 * k))
    grads, dx = mlp_backward(field.net, mcache, d_raw)
    d_mu = positional_encoding_backward(mu, field.spatial, dx[:, :ep_width])
    return grads, d_mu


def apply_df(params, deltas):
    """Apply deltas to raw Gaussian parameters; returns (new params dict, cache).

    `params` is a dict with mu, quat, log_scale, opacity_logit, sh (raw,
    unconstrained forms). Rotation composes on the right with the normalized
    (identity + raw) quaternion perturbation.
    """
    dq_raw = deltas["quat"] + np.array([1.0, 0.0, 0.0, 0.0])
    dq = normalize(dq_raw)
    out = {
        "mu": params["mu"] + deltas["mu"],
        "quat": quat_mul(params["quat"], dq),
        "log_scale": params["log_scale"] + deltas["log_scale"],
        "opacity_logit": params["opacity_logit"] + deltas["opacity_logit"],
        "sh": params["sh"] + deltas["sh"],
    }
    return out, (params["quat"], dq_raw, dq)


def apply_df_backward(cache, d_out):
    """VJP of apply_df: returns (d_params, d_deltas)."""
    q, dq_raw, dq = cache
    d_q, d_dq = quat_mul_backward(q, dq, d_out["quat"])
    d_dq_raw = normalize_backward(dq_raw, d_dq)
    d_params = {
        "mu": d_out["mu"],
        "quat": d_q,
        "log_scale": d_out["log_scale"],
        "opacity_logit": d_out["opacity_logit"],
        "sh": d_out["sh"],
    }
    d_deltas = {
        "mu": d_out["mu"],
        "quat": d_dq_raw,
        "log_scale": d_out["log_scale"],
        "opacity_logit": d_out["opacity_logit"],
        "sh": d_out["sh"],
    }
    return d_params, d_deltas


@dataclass
class HoverField:
    """Placement/position offsets for adsorbed Gaussians on a deformed mesh."""

    net: MlpNetwork
    spatial: Encoding


def make_hover_field(hidden: int = 256, depth: int = 8,
                     spatial_freqs: int = SPATIAL_FREQS,
                     rng: np.random.Generator | None = None) -> HoverField:
    spatial = Encoding(spatial_freqs)
    in_dim = spatial.out_dim(3) + spatial.out_dim(9) + 3
    net = make_mlp(in_dim, 6, hidden, depth, rng=rng, zero_head=True)
    field = HoverField(net, spatial)
    d_alpha, d_mu, _ = rdf_query(field, np.zeros((1, 3)), np.zeros((1, 3, 3)),
                                 np.zeros((1, 3)))
    if np.any(d_alpha) or np.any(d_mu):
        raise AssertionError("freshly built hover field is not the identity")
    return field


def rdf_query(field: HoverField, rest_centroid: np.ndarray,
              deformed_verts: np.ndarray, alpha: np.ndarray):
    """Hover offsets. rest_centroid (G,3), deformed_verts (G,3,3), alpha (G,3).

    Returns (d_alpha (G,3), d_mu (G,3), cache).
    """
    rest_centroid = np.atleast_2d(np.asarray(rest_centroid, float))
    g = rest_centroid.shape[0]
    dv = np.asarray(deformed_verts, float).reshape(g, 9)
    alpha = np.asarray(alpha, float).reshape(g, 3)
    e_c = positional_encoding(rest_centroid, field.spatial)
    e_v = positional_encoding(dv, field.spatial)
    x = np.concatenate([e_c, e_v, alpha], axis=1)
    raw, mcache = mlp_forward(field.net, x)
    cache = (rest_centroid, dv, alpha, e_c.shape[1], e_v.shape[1], mcache)
    return raw[:, 0:3], raw[:, 3:6], cache


def rdf_query_backward(field: HoverField, cache, d_alpha_out, d_mu_out):
    """VJP: returns (net grads, d_rest_centroid, d_deformed_verts, d_alpha_in)."""
    rest_centroid, dv, alpha, wc, wv, mcache = cache
    d_raw = np.concatenate([np.asarray(d_alpha_out, float),
                            np.asarray(d_mu_out, float)], axis=1)
    grads, dx = mlp_backward(field.net, mcache, d_raw)
    d_c = positional_encoding_backward(rest_centroid, field.spatial, dx[:, :wc])
    d_v = positional_encoding_backward(dv, field.spatial, dx[:, wc:wc + wv])
    d_alpha_in = dx[:, wc + wv:]
    return grads, d_c, d_v.reshape(-1, 3, 3), d_alpha_in


def gaussian_count_coeffs(sh_degree: int) -> int:
    return shlib.num_coeffs(sh_degree)
