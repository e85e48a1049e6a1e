"""Gaussians bound to mesh facets.

Placement on a facet is a sigmoid-weighted barycenter of its vertices,
optionally offset by learned hover fields (placement-logit and position
offsets). Under mesh deformation the Gaussian's scale follows the facet's
area ratio and its rotation composes with the rotation between the facet's
rest and deformed orthonormal bases. `bake` converts the bound set into
standard Gaussians for rendering; `bake_backward` is its exact VJP and
drives all Stage-II gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sh as shlib
from .errors import CollapsedFacet, DegenerateFacet
from .gaussians import GaussianCloud, inverse_sigmoid, sigmoid
from .geom import (gram_schmidt_backward, gram_schmidt_batch, mat_to_quat,
                   mat_to_quat_backward, quat_identity, quat_mul,
                   quat_mul_backward)
from .mesh import TriMesh


@dataclass
class AdsorbedGaussians:
    """Structure-of-arrays for Gaussians adsorbed to mesh facets."""

    facet_ids: np.ndarray      # (G,)
    alpha: np.ndarray          # (G,3) placement logits
    hover_alpha: np.ndarray    # (G,3) placement offset, default 0
    hover_mu: np.ndarray       # (G,3) position offset, default 0
    quat: np.ndarray           # (G,4) base rotation (raw)
    log_scale: np.ndarray      # (G,3)
    opacity_logit: np.ndarray  # (G,)
    sh: np.ndarray             # (G,K,3)

    def __post_init__(self):
        self.facet_ids = np.asarray(self.facet_ids, np.int64).reshape(-1)
        g = len(self.facet_ids)
        self.alpha = np.asarray(self.alpha, float).reshape(g, 3)
        self.hover_alpha = np.asarray(self.hover_alpha, float).reshape(g, 3)
        self.hover_mu = np.asarray(self.hover_mu, float).reshape(g, 3)
        self.quat = np.asarray(self.quat, float).reshape(g, 4)
        self.log_scale = np.asarray(self.log_scale, float).reshape(g, 3)
        self.opacity_logit = np.asarray(self.opacity_logit, float).reshape(g)
        sh = np.asarray(self.sh, float)
        if sh.ndim != 3:
            sh = sh.reshape(g, -1, 3) if g else sh.reshape(0, 1, 3)
        self.sh = sh

    def __len__(self) -> int:
        return len(self.facet_ids)

    def clear_hover(self):
        self.hover_alpha[:] = 0.0
        self.hover_mu[:] = 0.0

    def copy(self) -> "AdsorbedGaussians":
        return AdsorbedGaussians(*(a.copy() for a in (
            self.facet_ids, self.alpha, self.hover_alpha, self.hover_mu,
            self.quat, self.log_scale, self.opacity_logit, self.sh)))


def adsorbed_mu(v1, v2, v3, alpha):
    """Sigmoid-barycentric placement: sum_i F(a_i) v_i / sum_i F(a_i)."""
    v = np.stack([np.asarray(v1, float), np.asarray(v2, float),
                  np.asarray(v3, float)])
    w = sigmoid(np.asarray(alpha, float)).reshape(3)
    return (w[:, None] * v).sum(0) / w.sum()


def hovered_mu(v1, v2, v3, alpha, d_alpha, d_mu):
    """Placement with hover offsets applied: shifted logits plus a free offset."""
    a = np.asarray(alpha, float) + np.asarray(d_alpha, float)
    return adsorbed_mu(v1, v2, v3, a) + np.asarray(d_mu, float)


def transfer_scale(s, v_rest, v_def):
    """Scale times the facet's parallelogram-area ratio (applied as printed,
    not its square root)."""
    v_rest = np.asarray(v_rest, float).reshape(3, 3)
    v_def = np.asarray(v_def, float).reshape(3, 3)
    n_rest = np.cross(v_rest[1] - v_rest[0], v_rest[2] - v_rest[0])
    n_def = np.cross(v_def[1] - v_def[0], v_def[2] - v_def[0])
    nd = np.linalg.norm(n_def)
    if nd < 1e-12:
        raise CollapsedFacet("deformed facet has zero area")
    return np.asarray(s, float) * (nd / np.linalg.norm(n_rest))


def facet_basis(verts):
    """Gram-Schmidt basis of one facet from (e1, e2, e1 x e2)."""
    verts = np.asarray(verts, float).reshape(3, 3)
    e1 = verts[1] - verts[0]
    e2 = verts[2] - verts[0]
    O, _ = gram_schmidt_batch(e1[None], e2[None], np.cross(e1, e2)[None])
    return O[0]


def transfer_rotation(q, v_rest, v_def):
    """Compose q with the rotation carrying the rest facet basis to the
    deformed one."""
    O = facet_basis(v_rest)
    Od = facet_basis(v_def)
    r_star = Od @ O.T
    return quat_mul(mat_to_quat(r_star), np.asarray(q, float))


def init_adsorbed(mesh: TriMesh, count_per_facet: int = 1, seed: int = 0,
                  sh_degree: int = 0) -> AdsorbedGaussians:
    """Fresh adsorbed set: random placement logits, facet-area-scaled sizes,
    low opacity, mid-gray color."""
    if count_per_facet < 1:
        raise ValueError("count_per_facet must be >= 1")
    rng = np.random.default_rng(seed)
    m = mesh.num_faces
    g = m * count_per_facet
    facet_ids = np.repeat(np.arange(m, dtype=np.int64), count_per_facet)
    alpha = rng.normal(0.0, 0.5, (g, 3))
    areas = mesh.face_areas()[facet_ids]
    log_scale = np.log(0.5 * np.sqrt(areas))[:, None] * np.ones((1, 3))
    k = shlib.num_coeffs(sh_degree)
    return AdsorbedGaussians(
        facet_ids, alpha, np.zeros((g, 3)), np.zeros((g, 3)),
        np.tile(quat_identity(), (g, 1)), log_scale,
        np.full(g, inverse_sigmoid(0.1)), np.zeros((g, k, 3)))


# ---------------------------------------------------------------------------
# bake: adsorbed set + deformed mesh -> standard Gaussians (with VJP)
# ---------------------------------------------------------------------------

def _facet_bases(verts, facet_ids):
    """Batched facet Gram-Schmidt with facet-indexed error reporting."""
    e1 = verts[:, 1] - verts[:, 0]
    e2 = verts[:, 2] - verts[:, 0]
    e3 = np.cross(e1, e2)
    try:
        return gram_schmidt_batch(e1, e2, e3), (e1, e2, e3)
    except DegenerateFacet as err:
        raise DegenerateFacet(str(err), int(facet_ids[err.facet_index])) from None


def bake(mesh: TriMesh, ads: AdsorbedGaussians, use_hover: bool = True,
         sqrt_scale_ratio: bool = False):
    """Convert to standard Gaussians on the current deformed vertices.

    Returns (cloud, cache); the cache feeds bake_backward. With the mesh
    undeformed and hover fields zero this reproduces the rest-pose set.
    `sqrt_scale_ratio` swaps the raw area ratio for its square root
    (dimension-consistent alternative, off by default).
    """
    fv_rest = mesh.vertices[mesh.faces[ads.facet_ids]]   # (G,3,3)
    fv_def = mesh.deformed[mesh.faces[ads.facet_ids]]

    a_eff = ads.alpha + ads.hover_alpha if use_hover else ads.alpha
    w = sigmoid(a_eff)                                   # (G,3)
    wsum = w.sum(axis=1, keepdims=True)
    bary = np.einsum("gi,gid->gd", w, fv_def) / wsum
    mu = bary + ads.hover_mu if use_hover else bary

    n_rest = np.cross(fv_rest[:, 1] - fv_rest[:, 0], fv_rest[:, 2] - fv_rest[:, 0])
    n_def = np.cross(fv_def[:, 1] - fv_def[:, 0], fv_def[:, 2] - fv_def[:, 0])
    nn_rest = np.linalg.norm(n_rest, axis=1)
    nn_def = np.linalg.norm(n_def, axis=1)
    collapsed = np.flatnonzero(nn_def < 1e-12)
    if collapsed.size:
        raise CollapsedFacet("deformed facet has zero area",
                             int(ads.facet_ids[collapsed[0]]))
    ratio = nn_def / nn_rest
    ratio_eff = np.sqrt(ratio) if sqrt_scale_ratio else ratio
    scale = np.exp(ads.log_scale) * ratio_eff[:, None]

    (O, gs_rest_cache), rest_edges = _facet_bases(fv_rest, ads.facet_ids)
    (Od, gs_def_cache), def_edges = _facet_bases(fv_def, ads.facet_ids)
    r_star = Od @ np.swapaxes(O, 1, 2)
    q_star = mat_to_quat(r_star)
    quat = quat_mul(q_star, ads.quat)

    opacity = sigmoid(ads.opacity_logit)
    cloud = GaussianCloud(mu, quat, scale, opacity, ads.sh.copy())
    cache = (mesh, ads, use_hover, sqrt_scale_ratio, fv_def, w, wsum, bary,
             n_rest, n_def, nn_rest, nn_def, ratio, O, Od, gs_rest_cache,
             gs_def_cache, rest_edges, def_edges, r_star, q_star, opacity)
    return cloud, cache


def bake_backward(cache, d_cloud: dict) -> dict:
    """VJP of bake. d_cloud carries 'mu', 'quat', 'scale', 'opacity', 'sh'
    (as produced by rasterize_backward). Returns gradients for the adsorbed
    parameters plus the mesh buffers: 'vertices' (rest) and 'deformed'."""
    (mesh, ads, use_hover, sqrt_scale_ratio, fv_def, w, wsum, bary,
     n_rest, n_def, nn_rest, nn_def, ratio, O, Od, gs_rest_cache,
     gs_def_cache, rest_edges, def_edges, r_star, q_star, opacity) = cache
    G = len(ads)
    d_mu = np.asarray(d_cloud["mu"], float)
    d_quat_out = np.asarray(d_cloud["quat"], float)
    d_scale_out = np.asarray(d_cloud["scale"], float)
    d_opacity_out = np.asarray(d_cloud["opacity"], float)

    out = {
        "alpha": np.zeros((G, 3)),
        "hover_alpha": np.zeros((G, 3)),
        "hover_mu": np.zeros((G, 3)),
        "quat": np.zeros((G, 4)),
        "log_scale": np.zeros((G, 3)),
        "opacity_logit": d_opacity_out * opacity * (1.0 - opacity),
        "sh": np.asarray(d_cloud["sh"], float).copy(),
    }
    d_fv_def = np.zeros((G, 3, 3))
    d_fv_rest = np.zeros((G, 3, 3))

    # position: mu = sum w_i v'_i / sum w + hover_mu
    if use_hover:
        out["hover_mu"] += d_mu
    d_bary = d_mu
    d_fv_def += w[:, :, None] / wsum[:, :, None] * d_bary[:, None, :]
    d_w = (np.einsum("gid,gd->gi", fv_def, d_bary)
           - np.einsum("gd,gd->g", bary, d_bary)[:, None]) / wsum
    d_a_eff = d_w * w * (1.0 - w)
    out["alpha"] += d_a_eff
    if use_hover:
        out["hover_alpha"] += d_a_eff

    # scale: s_out = exp(log_scale) * ratio (or its square root)
    s = np.exp(ads.log_scale)
    ratio_eff = np.sqrt(ratio) if sqrt_scale_ratio else ratio
    out["log_scale"] += d_scale_out * s * ratio_eff[:, None]
    d_ratio = np.einsum("gi,gi->g", d_scale_out, s)
    if sqrt_scale_ratio:
        d_ratio = d_ratio * 0.5 / np.sqrt(ratio)
    d_nn_def = d_ratio / nn_rest
    d_nn_rest = -d_ratio * ratio / nn_rest
    d_n_def = d_nn_def[:, None] * n_def / nn_def[:, None]
    d_n_rest = d_nn_rest[:, None] * n_rest / nn_rest[:, None]
    # n = (v2-v1) x (v3-v1): cross VJP, then scatter to facet corners
    for (d_n, fv, d_fv) in ((d_n_def, fv_def, d_fv_def),
                            (d_n_rest, None, d_fv_rest)):
        verts = fv if fv is not None else mesh.vertices[mesh.faces[ads.facet_ids]]
        a = verts[:, 1] - verts[:, 0]
        b = verts[:, 2] - verts[:, 0]
        d_a = np.cross(b, d_n)
        d_b = np.cross(d_n, a)
        d_fv[:, 1] += d_a
        d_fv[:, 2] += d_b
        d_fv[:, 0] -= d_a + d_b

    # rotation: quat_out = q_star (x) base_quat, q_star from R* = Od O^T
    d_q_star, d_q_base = quat_mul_backward(q_star, ads.quat, d_quat_out)
    out["quat"] += d_q_base
    d_r_star = mat_to_quat_backward(r_star, d_q_star)
    d_Od = d_r_star @ O
    d_O = np.swapaxes(d_r_star, 1, 2) @ Od
    for (d_B, gs_cache, edges, d_fv) in (
            (d_O, gs_rest_cache, rest_edges, d_fv_rest),
            (d_Od, gs_def_cache, def_edges, d_fv_def)):
        de1, de2, de3 = gram_schmidt_backward(gs_cache, d_B)
        e1, e2, _ = edges
        de1 = de1 + np.cross(e2, de3)
        de2 = de2 + np.cross(de3, e1)
        d_fv[:, 1] += de1
        d_fv[:, 2] += de2
        d_fv[:, 0] -= de1 + de2

    # scatter facet-corner gradients onto the vertex buffers
    d_vertices = np.zeros_like(mesh.vertices)
    d_deformed = np.zeros_like(mesh.deformed)
    corners = mesh.faces[ads.facet_ids]                 # (G,3)
    np.add.at(d_vertices, corners.ravel(), d_fv_rest.reshape(-1, 3))
    np.add.at(d_deformed, corners.ravel(), d_fv_def.reshape(-1, 3))
    out["vertices"] = d_vertices
    out["deformed"] = d_deformed
    return out
