"""Finite-difference oracles for every hand-written backward pass.

Each suite builds a small, smooth configuration (away from compositing
cutoffs and clamps), computes analytic gradients, and compares them against
central differences at h = 1e-4. Field networks use reduced encoding
frequencies so the FD oracle itself stays in its accurate regime; the chain
rule structure under test is identical at any frequency count.

`run_all` returns {suite: max relative error}; the CLI `check` command
prints one line per suite and fails if any exceeds 1e-3.
"""

from __future__ import annotations

import numpy as np

from .adsorb import bake, bake_backward, init_adsorbed
from .camera import orbit_camera
from .fields import (apply_df, apply_df_backward, df_query, df_query_backward,
                     make_hover_field, make_time_field, rdf_query,
                     rdf_query_backward)
from .gaussians import GaussianCloud
from .losses import image_loss
from .mesh import TriMesh
from .mlp import make_mlp, mlp_backward, mlp_forward
from .rasterizer import rasterize, rasterize_backward
from .train import activate, activate_backward

H_FD = 1e-4
TOLERANCE = 1e-3


def _rel_err(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, float)
    numeric = np.asarray(numeric, float)
    mask = np.maximum(np.abs(analytic), np.abs(numeric)) > 1e-9
    if not mask.any():
        return 0.0
    rel = np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(rel[mask].max())


def _fd_grad(f, arr, h=H_FD):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        lp = f()
        arr[i] = orig - h
        lm = f()
        arr[i] = orig
        g[i] = (lp - lm) / (2.0 * h)
    return g


def _fd_grad_sig(f, arr, h=H_FD):
    """Central differences for a loss that also reports a ReLU-state signature.

    Coordinates whose +h/-h evaluations disagree on any ReLU branch straddle
    a kink where the function is not differentiable; those are excluded
    (returned mask False) rather than compared.
    """
    g = np.zeros_like(arr)
    valid = np.zeros(arr.shape, bool)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        lp, sp = f()
        arr[i] = orig - h
        lm, sm = f()
        arr[i] = orig
        if sp == sm:
            g[i] = (lp - lm) / (2.0 * h)
            valid[i] = True
    return g, valid


def _fd_grad_sampled(f, arr, rng, count, h=H_FD):
    """Signature-aware FD on a random subset of coordinates; yields
    (flat index, fd value) for kink-free coordinates only."""
    flat = arr.reshape(-1)
    n = flat.size
    picks = rng.choice(n, size=min(count, n), replace=False)
    out = []
    for j in picks:
        orig = flat[j]
        flat[j] = orig + h
        lp, sp = f()
        flat[j] = orig - h
        lm, sm = f()
        flat[j] = orig
        if sp == sm:
            out.append((int(j), (lp - lm) / (2.0 * h)))
    return out


def _masked_rel_err(analytic, fd, valid):
    if not valid.any():
        return 0.0
    return _rel_err(np.where(valid, analytic, 0.0), np.where(valid, fd, 0.0))


def _cutoff_margins_ok(cloud, cam) -> bool:
    """True when no pixel sits near a compositing cutoff or clamp, so central
    differences at h = 1e-4 cannot cross a discontinuity."""
    from .rasterizer import project_cloud, _alpha_terms, ALPHA_MIN, ALPHA_MAX, \
        MAHALANOBIS_CUTOFF

    proj = project_cloud(cloud, cam)
    if len(proj.idx) != len(cloud):
        return False  # everything must stay visible under perturbation
    if len(proj.idx) > 1 and np.min(np.diff(np.sort(proj.depth))) < 1e-3:
        return False  # no depth-order ties
    sh_c, _, _, B, _ = proj.sh_cache
    raw_color = np.einsum("nk,nkc->nc", B, sh_c) + 0.5
    if np.min(np.abs(raw_color)) < 1e-3:
        return False  # color clamp kink
    opac = cloud.opacity[proj.idx]
    ys = np.arange(cam.height) + 0.5
    xs = np.arange(cam.width) + 0.5
    for k in range(len(proj.idx)):
        _, _, g, a_raw, _, _ = _alpha_terms(proj, k, opac[k], ys, xs)
        q = -2.0 * np.log(np.maximum(g, 1e-300))
        if np.min(np.abs(q - MAHALANOBIS_CUTOFF)) < 2e-2:
            return False
        if np.min(np.abs(a_raw - ALPHA_MIN)) < 1e-5:
            return False
        if np.min(np.abs(a_raw - ALPHA_MAX)) < 1e-5:
            return False
    return True


def _smooth_scene(rng, n=5, size=8):
    """Gaussians whose 3-sigma footprints cover the frame, far from cutoffs."""
    cam = orbit_camera(0.7, 0.4, 3.0, (0, 0, 0), 0.9, size, size, 0.1, 100.0)
    for _ in range(100):
        cloud = GaussianCloud(
            rng.normal(0.0, 0.25, (n, 3)),
            rng.normal(0.0, 1.0, (n, 4)),
            np.exp(rng.normal(-0.4, 0.15, (n, 3))),
            rng.uniform(0.35, 0.75, n),
            rng.normal(0.0, 0.2, (n, 4, 3)),
        )
        if _cutoff_margins_ok(cloud, cam):
            return cloud, cam
    raise RuntimeError("could not find a cutoff-safe scene")


def check_rasterizer(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    cloud, cam = _smooth_scene(rng)
    wts = rng.normal(size=(8, 8, 3))
    bg = (0.1, 0.2, 0.3)

    def loss():
        return float(np.sum(rasterize(cloud, cam, bg).color * wts))

    out = rasterize(cloud, cam, bg)
    grads = rasterize_backward(out, wts)
    worst = 0.0
    for name in ("mu", "quat", "scale", "opacity", "sh"):
        fd = _fd_grad(lambda: loss(), getattr(cloud, name))
        worst = max(worst, _rel_err(grads[name], fd))
    return worst


def check_image_loss(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.35, 0.65, (8, 8, 3))
    # keep |a-b| away from the L1 sign kink so FD stays one-sided
    b = a + rng.choice([-1.0, 1.0], a.shape) * rng.uniform(0.05, 0.3, a.shape)
    b = np.clip(b, 0.0, 1.0)
    _, grad = image_loss(a, b)
    fd = _fd_grad(lambda: image_loss(a, b)[0], a)
    return _rel_err(grad, fd)


def _mask_sig(relu_masks) -> bytes:
    return b"".join(m.tobytes() for m in relu_masks)


def check_mlp(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    net = make_mlp(6, 4, hidden=16, depth=8, rng=rng, zero_head=False)
    x = rng.normal(size=(5, 6))
    wts = rng.normal(size=(5, 4))

    def loss_sig():
        out, cache = mlp_forward(net, x)
        return float(np.sum(out * wts)), _mask_sig(cache[2])

    out, cache = mlp_forward(net, x)
    grads, dx = mlp_backward(net, cache, wts)
    worst = 0.0
    sub = np.random.default_rng(seed + 1)
    for p, g in zip(net.parameters(), grads):
        for j, fd in _fd_grad_sampled(loss_sig, p, sub, 6):
            worst = max(worst, _rel_err(g.reshape(-1)[j], fd))
    fdx, valid = _fd_grad_sig(loss_sig, x)
    return max(worst, _masked_rel_err(dx, fdx, valid))


def _small_time_field(rng, sh_coeffs=1):
    field = make_time_field(sh_coeffs, hidden=16, depth=8, spatial_freqs=4,
                            temporal_freqs=3, rng=rng)
    field.net.weights[-1][:] = rng.normal(0.0, 0.05, field.net.weights[-1].shape)
    field.net.biases[-1][:] = rng.normal(0.0, 0.02, field.net.biases[-1].shape)
    return field


def check_df_path(seed: int = 0) -> float:
    """Rendered-pixel loss through field query + delta application + splatting."""
    rng = np.random.default_rng(seed)
    cloud, cam = _smooth_scene(rng)
    field = _small_time_field(rng, sh_coeffs=cloud.sh.shape[1])
    params = {
        "mu": cloud.mu,
        "quat": cloud.quat,
        "log_scale": np.log(cloud.scale),
        "opacity_logit": np.log(cloud.opacity / (1 - cloud.opacity)),
        "sh": cloud.sh,
    }
    wts = rng.normal(size=(8, 8, 3))
    t = 0.37

    def forward():
        deltas, dfq = df_query(field, params["mu"], t)
        applied, adf = apply_df(params, deltas)
        out = rasterize(activate(applied), cam, (0.1, 0.1, 0.1))
        return out, dfq, adf

    def loss_sig():
        out, dfq, _ = forward()
        return float(np.sum(out.color * wts)), _mask_sig(dfq[2][2])

    # regenerate until the deformed cloud also clears the compositing cutoffs
    for _ in range(100):
        deltas, _ = df_query(field, params["mu"], t)
        applied, _ = apply_df(params, deltas)
        if _cutoff_margins_ok(activate(applied), cam):
            break
        cloud, cam = _smooth_scene(rng)
        params = {
            "mu": cloud.mu,
            "quat": cloud.quat,
            "log_scale": np.log(cloud.scale),
            "opacity_logit": np.log(cloud.opacity / (1 - cloud.opacity)),
            "sh": cloud.sh,
        }

    out, dfq, adf = forward()
    cg = rasterize_backward(out, wts)
    applied, _ = apply_df(params, df_query(field, params["mu"], t)[0])
    pgrads = activate_backward(activate(applied), cg)
    d_params, d_deltas = apply_df_backward(adf, pgrads)
    net_grads, d_mu_enc = df_query_backward(field, dfq, d_deltas)
    d_params = dict(d_params)
    d_params["mu"] = d_params["mu"] + d_mu_enc

    worst = 0.0
    for name in ("mu", "quat", "log_scale", "opacity_logit", "sh"):
        fd, valid = _fd_grad_sig(loss_sig, params[name])
        worst = max(worst, _masked_rel_err(d_params[name], fd, valid))
    sub = np.random.default_rng(seed + 2)
    for p, g in zip(field.net.parameters(), net_grads):
        for j, fd in _fd_grad_sampled(loss_sig, p, sub, 4):
            worst = max(worst, _rel_err(g.reshape(-1)[j], fd))
    return worst


def _tiny_hybrid(rng, num_gaussians=5, margin_check=None):
    """Five Gaussians on a six-facet triangular bipyramid, jittered until the
    rendered configuration clears every FD hazard (margin_check may add
    conditions, e.g. hover-field kink margins)."""
    verts = np.array([[0.0, 0.0, 0.6], [0.5, 0.0, 0.0], [-0.25, 0.43, 0.0],
                      [-0.25, -0.43, 0.0], [0.0, 0.0, -0.6]])
    faces = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1],
                      [4, 2, 1], [4, 3, 2], [4, 1, 3]])
    cam = orbit_camera(0.5, 0.45, 3.0, (0, 0, 0), 0.9, 8, 8, 0.1, 100.0)
    for _ in range(100):
        mesh = TriMesh(verts.copy(), faces)
        mesh.deformed = verts + rng.normal(0.0, 0.06, verts.shape)
        ads = init_adsorbed(mesh, 1, seed=3, sh_degree=0)
        ads = type(ads)(*(a[:num_gaussians].copy() for a in (
            ads.facet_ids, ads.alpha, ads.hover_alpha, ads.hover_mu,
            ads.quat, ads.log_scale, ads.opacity_logit, ads.sh)))
        ads.alpha[:] = rng.normal(0.0, 0.5, ads.alpha.shape)
        ads.quat[:] = rng.normal(0.0, 1.0, ads.quat.shape)
        ads.log_scale[:] = np.log(0.35) + rng.normal(0.0, 0.1, ads.log_scale.shape)
        ads.opacity_logit[:] = rng.normal(0.4, 0.3, len(ads))
        ads.sh[:] = rng.normal(0.0, 0.25, ads.sh.shape)
        cloud, _ = bake(mesh, ads, use_hover=True)
        if _cutoff_margins_ok(cloud, cam) and \
                (margin_check is None or margin_check(mesh, ads, cam)):
            return mesh, ads, cam
    raise RuntimeError("could not find a cutoff-safe hybrid configuration")


def check_bake(seed: int = 0) -> float:
    """Rendered loss through bake: V', rest V, placement, hover, appearance."""
    rng = np.random.default_rng(seed)
    for _ in range(100):
        mesh, ads, cam = _tiny_hybrid(rng)
        ads.hover_alpha[:] = rng.normal(0.0, 0.3, ads.hover_alpha.shape)
        ads.hover_mu[:] = rng.normal(0.0, 0.04, ads.hover_mu.shape)
        cloud, _ = bake(mesh, ads, use_hover=True)
        if _cutoff_margins_ok(cloud, cam):
            break
    wts = rng.normal(size=(8, 8, 3))

    def loss():
        cloud, _ = bake(mesh, ads, use_hover=True)
        return float(np.sum(rasterize(cloud, cam, (0.1, 0.1, 0.1)).color * wts))

    cloud, cache = bake(mesh, ads, use_hover=True)
    out = rasterize(cloud, cam, (0.1, 0.1, 0.1))
    grads = bake_backward(cache, rasterize_backward(out, wts))
    worst = 0.0
    targets = [("alpha", ads.alpha), ("hover_alpha", ads.hover_alpha),
               ("hover_mu", ads.hover_mu), ("quat", ads.quat),
               ("log_scale", ads.log_scale), ("opacity_logit", ads.opacity_logit),
               ("sh", ads.sh), ("vertices", mesh.vertices),
               ("deformed", mesh.deformed)]
    for name, arr in targets:
        fd = _fd_grad(loss, arr)
        worst = max(worst, _rel_err(grads[name], fd))
    return worst


def check_rdf_path(seed: int = 0) -> float:
    """Stage-II graph: hover field -> bake -> splatting -> image loss, with
    gradients for every learnable (rest vertices, placement, appearance,
    field weights)."""
    rng = np.random.default_rng(seed)
    rdf = make_hover_field(hidden=16, depth=8, spatial_freqs=3, rng=rng)
    rdf.net.weights[-1][:] = rng.normal(0.0, 0.05, rdf.net.weights[-1].shape)
    gt = None
    penalty = 1e-2

    def margin_check(mesh, ads, cam):
        trial = ads.copy()
        centroids = mesh.vertices[mesh.faces[trial.facet_ids]].mean(axis=1)
        fv_def = mesh.deformed[mesh.faces[trial.facet_ids]]
        trial.hover_alpha, trial.hover_mu, _ = rdf_query(
            rdf, centroids, fv_def, trial.alpha)
        cloud, _ = bake(mesh, trial, use_hover=True)
        if not _cutoff_margins_ok(cloud, cam):
            return False
        # keep the L1 term away from its sign kink
        render = rasterize(cloud, cam, (0.1, 0.1, 0.1)).color
        return np.min(np.abs(render - gt)) > 5e-3

    for _ in range(50):
        gt = rng.uniform(0.1, 0.9, (8, 8, 3))
        try:
            mesh, ads, cam = _tiny_hybrid(rng, margin_check=margin_check)
            break
        except RuntimeError:
            continue
    else:
        raise RuntimeError("no FD-safe stage-2 configuration found")
    G = len(ads)

    def forward():
        centroids = mesh.vertices[mesh.faces[ads.facet_ids]].mean(axis=1)
        fv_def = mesh.deformed[mesh.faces[ads.facet_ids]]
        d_alpha, d_mu, rdf_cache = rdf_query(rdf, centroids, fv_def, ads.alpha)
        ads.hover_alpha = d_alpha
        ads.hover_mu = d_mu
        cloud, bake_cache = bake(mesh, ads, use_hover=True)
        out = rasterize(cloud, cam, (0.1, 0.1, 0.1))
        loss, d_color = image_loss(out.color, gt)
        loss = loss + penalty * float(np.mean(np.sum(d_mu**2, axis=1)))
        return loss, d_color, rdf_cache, bake_cache, out, d_mu

    def loss_sig():
        f = forward()
        return f[0], _mask_sig(f[2][5][2])

    _, d_color, rdf_cache, bake_cache, out, d_mu = forward()
    bgr = bake_backward(bake_cache, rasterize_backward(out, d_color))
    d_hover_mu = bgr["hover_mu"] + 2.0 * penalty / G * d_mu
    net_grads, d_cent, _, d_alpha_in = rdf_query_backward(
        rdf, rdf_cache, bgr["hover_alpha"], d_hover_mu)
    d_alpha = bgr["alpha"] + d_alpha_in
    d_vertices = bgr["vertices"].copy()
    corners = mesh.faces[ads.facet_ids]
    np.add.at(d_vertices, corners.ravel(), np.repeat(d_cent / 3.0, 3, axis=0))

    worst = 0.0
    for an, arr in ((d_alpha, ads.alpha), (bgr["quat"], ads.quat),
                    (bgr["log_scale"], ads.log_scale),
                    (bgr["opacity_logit"], ads.opacity_logit),
                    (bgr["sh"], ads.sh), (d_vertices, mesh.vertices)):
        fd, valid = _fd_grad_sig(loss_sig, arr)
        worst = max(worst, _masked_rel_err(an, fd, valid))
    sub = np.random.default_rng(seed + 3)
    for p, g in zip(rdf.net.parameters(), net_grads):
        for j, fd in _fd_grad_sampled(loss_sig, p, sub, 3):
            worst = max(worst, _rel_err(g.reshape(-1)[j], fd))
    return worst


SUITES = {
    "rasterizer": check_rasterizer,
    "image_loss": check_image_loss,
    "mlp": check_mlp,
    "df_path": check_df_path,
    "bake": check_bake,
    "rdf_path": check_rdf_path,
}


def run_all(seed: int = 0) -> dict:
    return {name: fn(seed) for name, fn in SUITES.items()}
