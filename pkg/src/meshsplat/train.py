"""Two-stage training orchestration.

Stage 1 fits free Gaussians plus a time-conditioned deformation field to the
posed frames (static warm-up first, then joint). Stage 2 rebinds the scene
to an extracted mesh: per frame, handle targets come from the frozen time
field, the mesh deforms by ARAP (treated as a fixed oracle, re-solved
periodically), hover offsets come from the trainable hover field, and the
baked Gaussians are rendered and scored against the frame.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adsorb import AdsorbedGaussians, bake, bake_backward, init_adsorbed
from .arap import ArapSystem, handles_from_field
from .camera import Camera
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import Dataset
from .errors import CheckpointError, EmptyDataset
from .fields import (HoverField, TimeField, apply_df, apply_df_backward,
                     df_query, df_query_backward, make_hover_field,
                     make_time_field, rdf_query, rdf_query_backward)
from .gaussians import GaussianCloud, inverse_sigmoid, sigmoid
from .losses import image_loss, psnr, ssim
from .mesh import TriMesh
from .meshing import poisson_disk_handles
from .mlp import MlpNetwork
from .optim import AdamState, adam_step
from .rasterizer import rasterize, rasterize_backward
from . import sh as shlib


@dataclass
class TrainConfig:
    # iteration budget
    iterations: int = 40_000
    warm_up: int = 3_000                # static pre-phase, no deformation field
    # learning rates
    position_lr_init: float = 1.6e-4
    position_lr_final: float = 1.6e-6
    position_lr_max_steps: int = 80_000
    feature_lr: float = 2.5e-3
    opacity_lr: float = 5e-2
    scaling_lr: float = 1e-3
    rotation_lr: float = 1e-3
    vertices_lr: float = 1.6e-4
    alpha_lr: float = 1e-4
    deform_lr_scale: float = 1.0        # field lr = position_lr_init * scale
    lr_ramp_iters: int = 600            # linear field-lr ramp from zero
    mlp_weight_decay: float = 5e-4
    # loss
    dssim_weight: float = 0.2
    hover_penalty: float = 1e-2         # L2 on hover position offsets
    # adaptive density control (stage 1)
    densify_interval: int = 100
    densify_from: int = 500
    densify_until: int = 50_000
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    opacity_reset_interval: int = 3_000  # 0 disables
    prune_opacity: float = 0.005
    max_gaussians: int = 500_000         # densification stops at this count
    # model sizes
    sh_degree: int = 1
    mlp_hidden: int = 256
    mlp_depth: int = 8
    spatial_freqs: int = 10
    temporal_freqs: int = 6
    init_points: int = 500
    init_extent: float = 1.2
    # stage 2 structure
    mesh_resolution: int = 128
    iso_quantile: float = 0.3
    count_per_facet: int = 1
    handle_count: int = 32
    arap_refresh: int = 50
    arap_iterations: int = 50
    rdf_enabled: bool = True
    scale_transfer_sqrt: bool = False   # use sqrt(area ratio) instead of the ratio
    # bookkeeping
    eval_interval: int = 500
    checkpoint_interval: int = 1_000
    seed: int = 0

    def __post_init__(self):
        for name in ("position_lr_init", "feature_lr", "opacity_lr",
                     "scaling_lr", "rotation_lr", "vertices_lr", "alpha_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.warm_up >= self.iterations and self.iterations > 0:
            raise ValueError("warm_up must be below the iteration budget")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**d)


def desk_scale_config(**overrides) -> TrainConfig:
    """Small-scene preset used by the synthetic end-to-end experiments.

    The densification threshold is the published value rescaled for the
    64x64 frames (mean-normalized losses make per-pixel gradients grow as
    the inverse pixel count, so the 800x800 threshold is scaled by
    (800/64)^2); the Gaussian budget is capped to keep iteration cost flat.
    """
    base = dict(
        iterations=5_000, warm_up=500, mlp_hidden=64,
        densify_from=300, densify_until=2_500, densify_interval=100,
        densify_grad_threshold=2e-4 * (800 / 64) ** 2,
        max_gaussians=1_200,
        opacity_reset_interval=0, sh_degree=1, init_points=400,
        mesh_resolution=24, handle_count=24, eval_interval=500,
        checkpoint_interval=0, seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def position_lr(cfg: TrainConfig, iteration: int) -> float:
    t = min(max(iteration, 0) / cfg.position_lr_max_steps, 1.0)
    return float(np.exp((1.0 - t) * np.log(cfg.position_lr_init)
                        + t * np.log(cfg.position_lr_final)))


def field_lr(cfg: TrainConfig, iteration: int) -> float:
    base = cfg.position_lr_init * cfg.deform_lr_scale
    ramp = min((iteration + 1) / max(cfg.lr_ramp_iters, 1), 1.0)
    fac = 1.0
    if iteration >= 10_000:
        fac *= 0.1
    if iteration >= 20_000:
        fac *= 0.1
    return base * ramp * fac


# ---------------------------------------------------------------------------
# raw parameter activation
# ---------------------------------------------------------------------------

def activate(params: dict) -> GaussianCloud:
    return GaussianCloud(params["mu"], params["quat"],
                         np.exp(params["log_scale"]),
                         sigmoid(params["opacity_logit"]), params["sh"])


def activate_backward(cloud: GaussianCloud, grads: dict) -> dict:
    return {
        "mu": grads["mu"],
        "quat": grads["quat"],
        "log_scale": grads["scale"] * cloud.scale,
        "opacity_logit": grads["opacity"] * cloud.opacity * (1.0 - cloud.opacity),
        "sh": grads["sh"],
    }


def init_random_gaussians(n: int, extent: float, rng: np.random.Generator,
                          sh_degree: int) -> dict:
    """Uniform positions in a ball; sizes from mean 3-NN distance."""
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= extent * rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / 3.0)
    from scipy.spatial import cKDTree

    d, _ = cKDTree(pts).query(pts, k=min(4, n))
    nn = d[:, 1:].mean(axis=1) if n > 1 else np.full(n, 0.1)
    k = shlib.num_coeffs(sh_degree)
    return {
        "mu": pts,
        "quat": np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        "log_scale": np.log(np.clip(nn, 1e-4, None))[:, None] * np.ones((1, 3)),
        "opacity_logit": np.full(n, inverse_sigmoid(0.1)),
        "sh": np.zeros((n, k, 3)),
    }


PARAM_LR = {
    "mu": None,  # scheduled
    "quat": "rotation_lr",
    "log_scale": "scaling_lr",
    "opacity_logit": "opacity_lr",
    "sh": "feature_lr",
}


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

@dataclass
class Stage1State:
    params: dict
    field: TimeField
    adam: dict                 # name -> AdamState for params
    net_adam: list             # AdamState per network parameter
    grad_accum: np.ndarray
    grad_denom: np.ndarray
    rng: np.random.Generator
    iteration: int = 0
    metrics: list = None

    def __post_init__(self):
        if self.metrics is None:
            self.metrics = []


def init_stage1(cfg: TrainConfig) -> Stage1State:
    rng = np.random.default_rng(cfg.seed)
    params = init_random_gaussians(cfg.init_points, cfg.init_extent, rng,
                                   cfg.sh_degree)
    field_ = make_time_field(shlib.num_coeffs(cfg.sh_degree), cfg.mlp_hidden,
                             cfg.mlp_depth, cfg.spatial_freqs,
                             cfg.temporal_freqs, rng)
    adam = {k: AdamState.for_param(v) for k, v in params.items()}
    net_adam = [AdamState.for_param(p, cfg.mlp_weight_decay)
                for p in field_.net.parameters()]
    n = len(params["mu"])
    return Stage1State(params, field_, adam, net_adam, np.zeros(n), np.zeros(n), rng)


def stage1_forward(state: Stage1State, cam: Camera, t: float, use_field: bool,
                   background=(0.0, 0.0, 0.0)):
    if use_field:
        deltas, dfq_cache = df_query(state.field, state.params["mu"], t)
        applied, adf_cache = apply_df(state.params, deltas)
    else:
        applied, dfq_cache, adf_cache = state.params, None, None
    cloud = activate(applied)
    out = rasterize(cloud, cam, background)
    return out, (cloud, dfq_cache, adf_cache, use_field)


def stage1_backward(state: Stage1State, out, fwd_cache, d_color):
    cloud, dfq_cache, adf_cache, use_field = fwd_cache
    cg = rasterize_backward(out, d_color)
    pgrads = activate_backward(cloud, cg)
    if use_field:
        d_params, d_deltas = apply_df_backward(adf_cache, pgrads)
        net_grads, d_mu_enc = df_query_backward(state.field, dfq_cache, d_deltas)
        d_params = dict(d_params)
        d_params["mu"] = d_params["mu"] + d_mu_enc
    else:
        d_params, net_grads = pgrads, None
    return d_params, net_grads, cg


def _densify_rows(params, adam, accum, denom, keep, new_params):
    """Apply a row filter plus appended rows to params, moments, accumulators."""
    for k in params:
        appended = new_params[k]
        params[k] = np.concatenate([params[k][keep], appended], axis=0)
        st = adam[k]
        st.m = np.concatenate([st.m[keep], np.zeros_like(appended)], axis=0)
        st.v = np.concatenate([st.v[keep], np.zeros_like(appended)], axis=0)
    n_new = len(new_params["mu"])
    accum = np.concatenate([accum[keep], np.zeros(n_new)])
    denom = np.concatenate([denom[keep], np.zeros(n_new)])
    return params, accum, denom


def densify_and_prune(state: Stage1State, cfg: TrainConfig, extent: float):
    """Clone small / split large high-gradient Gaussians, prune transparent ones."""
    params = state.params
    n = len(params["mu"])
    if n >= cfg.max_gaussians:
        state.grad_accum[:] = 0.0
        state.grad_denom[:] = 0.0
        return
    avg = np.where(state.grad_denom > 0, state.grad_accum / np.maximum(state.grad_denom, 1), 0.0)
    scale = np.exp(params["log_scale"])
    smax = scale.max(axis=1)
    over = avg > cfg.densify_grad_threshold
    small = smax < cfg.percent_dense * extent
    clone = over & small
    split = over & ~small

    new = {k: params[k][clone].copy() for k in params}
    if split.any():
        idx = np.flatnonzero(split)
        from .geom import quat_to_mat

        R = quat_to_mat(params["quat"][idx])
        s = scale[idx]
        children = []
        for _ in range(2):
            eps = state.rng.standard_normal((len(idx), 3))
            offs = np.einsum("nij,nj->ni", R, s * eps)
            child = {k: params[k][idx].copy() for k in params}
            child["mu"] = child["mu"] + offs
            child["log_scale"] = child["log_scale"] - np.log(1.6)
            children.append(child)
        for child in children:
            new = {k: np.concatenate([new[k], child[k]], axis=0) for k in params}

    opacity = sigmoid(params["opacity_logit"])
    keep = (opacity >= cfg.prune_opacity) & ~split
    new_keep = sigmoid(new["opacity_logit"]) >= cfg.prune_opacity
    new = {k: v[new_keep] for k, v in new.items()}
    state.params, state.grad_accum, state.grad_denom = _densify_rows(
        params, state.adam, state.grad_accum, state.grad_denom, keep, new)
    state.grad_accum[:] = 0.0  # fresh accumulation window
    state.grad_denom[:] = 0.0


def reset_opacity(state: Stage1State, ceiling: float = 0.01):
    op = sigmoid(state.params["opacity_logit"])
    state.params["opacity_logit"][:] = inverse_sigmoid(
        np.clip(np.minimum(op, ceiling), 1e-7, 1 - 1e-7))
    st = state.adam["opacity_logit"]
    st.m[:] = 0.0
    st.v[:] = 0.0


def _eval_metrics(render_fn, frames, dssim_weight) -> dict:
    ps, ss, ls = [], [], []
    for fr in frames:
        img = render_fn(fr)
        gt = fr.get_image()
        loss, _ = image_loss(img, gt, dssim_weight)
        ps.append(psnr(img, gt))
        ss.append(ssim(img, gt)[0])
        ls.append(loss)
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)),
            "loss": float(np.mean(ls))}


class MetricsLog:
    def __init__(self, path=None):
        self.path = path
        self.records = []
        if path:
            open(path, "w").close()

    def add(self, record: dict):
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def train_stage1(dataset: Dataset, cfg: TrainConfig, log_path=None,
                 ckpt_dir=None, state: Stage1State | None = None,
                 background=(0.0, 0.0, 0.0)) -> Stage1State:
    train_frames = dataset.train_frames
    if not train_frames:
        raise EmptyDataset("no training frames")
    test_frames = dataset.test_frames
    if state is None:
        state = init_stage1(cfg)
    log = MetricsLog(log_path)
    log.records = state.metrics
    bg = np.asarray(background, float)
    extent = _camera_extent(train_frames)

    def eval_now():
        if not test_frames:
            return
        use_field = state.iteration >= cfg.warm_up

        def render_fn(fr):
            out, _ = stage1_forward(state, fr.camera, fr.time, use_field, bg)
            return out.color

        m = _eval_metrics(render_fn, test_frames, cfg.dssim_weight)
        log.add({"iteration": state.iteration, "split": "test", **m})

    while state.iteration < cfg.iterations:
        it = state.iteration
        fr = train_frames[int(state.rng.integers(len(train_frames)))]
        use_field = it >= cfg.warm_up
        out, fwd = stage1_forward(state, fr.camera, fr.time, use_field, bg)
        loss, d_color = image_loss(out.color, fr.get_image(), cfg.dssim_weight)
        d_params, net_grads, cg = stage1_backward(state, out, fwd, d_color)

        # densification statistics in half-image units
        w2 = np.array([out.color.shape[1] / 2.0, out.color.shape[0] / 2.0])
        gnorm = np.linalg.norm(cg["mu2d"] * w2, axis=1)
        seen = np.zeros(len(gnorm), bool)
        seen[out.cache[3].idx] = True
        state.grad_accum[seen] += gnorm[seen]
        state.grad_denom[seen] += 1.0

        plr = position_lr(cfg, it)
        adam_step(state.adam["mu"], state.params["mu"], d_params["mu"], plr)
        for name, lr_name in PARAM_LR.items():
            if lr_name is None:
                continue
            adam_step(state.adam[name], state.params[name], d_params[name],
                      getattr(cfg, lr_name))
        if net_grads is not None:
            flr = field_lr(cfg, it)
            for p, g, st in zip(state.field.net.parameters(), net_grads,
                                state.net_adam):
                adam_step(st, p, g, flr)

        state.iteration = it + 1
        if (cfg.densify_from <= state.iteration <= cfg.densify_until
                and state.iteration % cfg.densify_interval == 0):
            densify_and_prune(state, cfg, extent)
        if (cfg.opacity_reset_interval > 0
                and state.iteration % cfg.opacity_reset_interval == 0
                and state.iteration < cfg.iterations):
            reset_opacity(state)
        if state.iteration % cfg.eval_interval == 0 or state.iteration == cfg.iterations:
            eval_now()
        if (ckpt_dir and cfg.checkpoint_interval > 0
                and state.iteration % cfg.checkpoint_interval == 0):
            save_stage1(os.path.join(ckpt_dir, f"stage1_{state.iteration:06d}.ckpt"),
                        state, cfg)
    return state


def _camera_extent(frames) -> float:
    centers = np.stack([f.camera.center for f in frames])
    centroid = centers.mean(axis=0)
    return float(np.linalg.norm(centers - centroid, axis=1).max())


# ---------------------------------------------------------------------------
# stage 1 checkpointing
# ---------------------------------------------------------------------------

def _net_arrays(prefix: str, net: MlpNetwork) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def _net_from_arrays(prefix: str, arrays: dict, skip) -> MlpNetwork:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        weights.append(np.array(arrays[f"{prefix}.w{i}"], float))
        biases.append(np.array(arrays[f"{prefix}.b{i}"], float))
        i += 1
    return MlpNetwork(weights, biases, tuple(skip))


def _adam_arrays(prefix: str, states: dict) -> tuple[dict, dict]:
    arrays, steps = {}, {}
    for name, st in states.items():
        arrays[f"{prefix}.{name}.m"] = st.m
        arrays[f"{prefix}.{name}.v"] = st.v
        steps[name] = st.step
    return arrays, steps


def _adam_restore(prefix: str, arrays: dict, steps: dict, params: dict,
                  weight_decay: float = 0.0) -> dict:
    out = {}
    for name, p in params.items():
        st = AdamState(np.array(arrays[f"{prefix}.{name}.m"], float),
                       np.array(arrays[f"{prefix}.{name}.v"], float),
                       int(steps[name]), weight_decay=weight_decay)
        out[name] = st
    return out


def save_stage1(path, state: Stage1State, cfg: TrainConfig) -> None:
    arrays = dict(state.params)
    arrays.update(_net_arrays("field", state.field.net))
    adam_arrays, adam_steps = _adam_arrays("adam", state.adam)
    arrays.update(adam_arrays)
    net_steps = []
    for i, st in enumerate(state.net_adam):
        arrays[f"net_adam.{i}.m"] = st.m
        arrays[f"net_adam.{i}.v"] = st.v
        net_steps.append(st.step)
    arrays["grad_accum"] = state.grad_accum
    arrays["grad_denom"] = state.grad_denom
    meta = {
        "config": cfg.to_dict(),
        "iteration": state.iteration,
        "rng_state": state.rng.bit_generator.state,
        "adam_steps": adam_steps,
        "net_adam_steps": net_steps,
        "field_skip": list(state.field.net.skip),
        "metrics": state.metrics,
    }
    save_checkpoint(path, "stage1", arrays, meta)


def load_stage1(path):
    """Returns (state, config)."""
    stage, arrays, meta = load_checkpoint(path)
    if stage != "stage1":
        raise CheckpointError(f"{path}: expected a stage1 checkpoint, got {stage}")
    cfg = TrainConfig.from_dict(meta["config"])
    params = {k: np.array(arrays[k], float)
              for k in ("mu", "quat", "log_scale", "opacity_logit", "sh")}
    net = _net_from_arrays("field", arrays, meta["field_skip"])
    from .encoding import Encoding

    field_ = TimeField(net, Encoding(cfg.spatial_freqs),
                       Encoding(cfg.temporal_freqs),
                       shlib.num_coeffs(cfg.sh_degree))
    adam = _adam_restore("adam", arrays, meta["adam_steps"], params)
    net_adam = []
    for i, p in enumerate(net.parameters()):
        st = AdamState(np.array(arrays[f"net_adam.{i}.m"], float),
                       np.array(arrays[f"net_adam.{i}.v"], float),
                       int(meta["net_adam_steps"][i]),
                       weight_decay=cfg.mlp_weight_decay)
        net_adam.append(st)
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = Stage1State(params, field_, adam, net_adam,
                        np.array(arrays["grad_accum"], float),
                        np.array(arrays["grad_denom"], float),
                        rng, int(meta["iteration"]), list(meta["metrics"]))
    return state, cfg


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

@dataclass
class HybridModel:
    """Mesh + adsorbed Gaussians + hover field + frozen time field."""

    mesh: TriMesh
    ads: AdsorbedGaussians
    rdf: HoverField
    df: TimeField
    handle_ids: np.ndarray
    sh_degree: int = 0
    rdf_enabled: bool = True
    scale_transfer_sqrt: bool = False

    def rest_centroids(self) -> np.ndarray:
        return self.mesh.vertices[self.mesh.faces[self.ads.facet_ids]].mean(axis=1)

    def refresh_hover(self):
        """Query the hover field against the current deformed mesh."""
        if not self.rdf_enabled:
            self.ads.clear_hover()
            return None
        fv_def = self.mesh.deformed[self.mesh.faces[self.ads.facet_ids]]
        d_alpha, d_mu, cache = rdf_query(self.rdf, self.rest_centroids(),
                                         fv_def, self.ads.alpha)
        self.ads.hover_alpha = d_alpha
        self.ads.hover_mu = d_mu
        return cache

    def bake_current(self):
        cloud, cache = bake(self.mesh, self.ads, use_hover=self.rdf_enabled,
                            sqrt_scale_ratio=self.scale_transfer_sqrt)
        return cloud, cache


@dataclass
class Stage2State:
    model: HybridModel
    arap: ArapSystem
    adam: dict
    vertices_adam: AdamState
    net_adam: list
    rng: np.random.Generator
    iteration: int = 0
    metrics: list = None
    arap_cache: dict = None     # time -> (deformed, solved_at_iteration)

    def __post_init__(self):
        if self.metrics is None:
            self.metrics = []
        if self.arap_cache is None:
            self.arap_cache = {}


def init_stage2(mesh: TriMesh, df: TimeField, cfg: TrainConfig) -> Stage2State:
    rng = np.random.default_rng(cfg.seed)
    handles = poisson_disk_handles(mesh, cfg.handle_count, cfg.seed)
    ads = init_adsorbed(mesh, cfg.count_per_facet, cfg.seed, cfg.sh_degree)
    rdf = make_hover_field(cfg.mlp_hidden, cfg.mlp_depth, cfg.spatial_freqs, rng)
    model = HybridModel(mesh, ads, rdf, df, handles.indices, cfg.sh_degree,
                        cfg.rdf_enabled, cfg.scale_transfer_sqrt)
    arap = ArapSystem(mesh, handles.indices)
    adam = {k: AdamState.for_param(getattr(ads, k)) for k in
            ("alpha", "quat", "log_scale", "opacity_logit", "sh")}
    vertices_adam = AdamState.for_param(mesh.vertices)
    net_adam = [AdamState.for_param(p, cfg.mlp_weight_decay)
                for p in rdf.net.parameters()]
    return Stage2State(model, arap, adam, vertices_adam, net_adam, rng)


def arap_deform_to(state: Stage2State, t: float, cfg: TrainConfig,
                   force: bool = False) -> np.ndarray:
    """Deformed vertices for timestamp t, re-solved every `arap_refresh` iters."""
    key = float(t)
    cached = state.arap_cache.get(key)
    if cached is not None and not force and \
            state.iteration - cached[1] < cfg.arap_refresh:
        return cached[0]
    model = state.model
    targets = handles_from_field(model.mesh, model.handle_ids, model.df, t)
    warm = cached[0] if cached is not None else None
    sol = state.arap.solve(targets, warm_start=warm,
                           max_iterations=cfg.arap_iterations)
    state.arap_cache[key] = (sol.vertices, state.iteration)
    return sol.vertices


def stage2_render_at(state: Stage2State, cam: Camera, t: float,
                     cfg: TrainConfig, background=(0.0, 0.0, 0.0)):
    model = state.model
    model.mesh.deformed = arap_deform_to(state, t, cfg)
    model.refresh_hover()
    cloud, _ = model.bake_current()
    return rasterize(cloud, cam, background)


def train_stage2(mesh: TriMesh, df: TimeField, dataset: Dataset,
                 cfg: TrainConfig, log_path=None, ckpt_dir=None,
                 state: Stage2State | None = None,
                 background=(0.0, 0.0, 0.0)) -> Stage2State:
    train_frames = dataset.train_frames
    if not train_frames:
        raise EmptyDataset("no training frames")
    test_frames = dataset.test_frames
    if state is None:
        state = init_stage2(mesh, df, cfg)
    model = state.model
    log = MetricsLog(log_path)
    log.records = state.metrics
    bg = np.asarray(background, float)
    G = max(len(model.ads), 1)

    def eval_now():
        if not test_frames:
            return
        def render_fn(fr):
            return stage2_render_at(state, fr.camera, fr.time, cfg, bg).color
        m = _eval_metrics(render_fn, test_frames, cfg.dssim_weight)
        log.add({"iteration": state.iteration, "split": "test", **m})

    while state.iteration < cfg.iterations:
        it = state.iteration
        fr = train_frames[int(state.rng.integers(len(train_frames)))]
        model.mesh.deformed = arap_deform_to(state, fr.time, cfg)
        rdf_cache = model.refresh_hover()
        cloud, bake_cache = model.bake_current()
        out = rasterize(cloud, fr.camera, bg)
        loss, d_color = image_loss(out.color, fr.get_image(), cfg.dssim_weight)
        cg = rasterize_backward(out, d_color)
        bg_grads = bake_backward(bake_cache, cg)

        d_vertices = bg_grads["vertices"]
        d_alpha = bg_grads["alpha"]
        net_grads = None
        if model.rdf_enabled and rdf_cache is not None:
            d_hover_mu = bg_grads["hover_mu"] + \
                2.0 * cfg.hover_penalty / G * model.ads.hover_mu
            net_grads, d_cent, _d_dv, d_alpha_in = rdf_query_backward(
                model.rdf, rdf_cache, bg_grads["hover_alpha"], d_hover_mu)
            d_alpha = d_alpha + d_alpha_in
            # centroid = mean of the rest facet corners
            corners = model.mesh.faces[model.ads.facet_ids]
            np.add.at(d_vertices, corners.ravel(),
                      np.repeat(d_cent / 3.0, 3, axis=0))

        adam_step(state.vertices_adam, model.mesh.vertices, d_vertices,
                  cfg.vertices_lr)
        adam_step(state.adam["alpha"], model.ads.alpha, d_alpha, cfg.alpha_lr)
        adam_step(state.adam["quat"], model.ads.quat, bg_grads["quat"],
                  cfg.rotation_lr)
        adam_step(state.adam["log_scale"], model.ads.log_scale,
                  bg_grads["log_scale"], cfg.scaling_lr)
        adam_step(state.adam["opacity_logit"], model.ads.opacity_logit,
                  bg_grads["opacity_logit"], cfg.opacity_lr)
        adam_step(state.adam["sh"], model.ads.sh, bg_grads["sh"], cfg.feature_lr)
        if net_grads is not None:
            flr = field_lr(cfg, it)
            for p, g, st in zip(model.rdf.net.parameters(), net_grads,
                                state.net_adam):
                adam_step(st, p, g, flr)

        state.iteration = it + 1
        if state.iteration % cfg.eval_interval == 0 or state.iteration == cfg.iterations:
            eval_now()
        if (ckpt_dir and cfg.checkpoint_interval > 0
                and state.iteration % cfg.checkpoint_interval == 0):
            save_stage2(os.path.join(ckpt_dir, f"stage2_{state.iteration:06d}.ckpt"),
                        state, cfg)
    return state


def save_stage2(path, state: Stage2State, cfg: TrainConfig) -> None:
    model = state.model
    ads = model.ads
    arrays = {
        "mesh.vertices": model.mesh.vertices,
        "mesh.faces": model.mesh.faces,
        "mesh.deformed": model.mesh.deformed,
        "ads.facet_ids": ads.facet_ids,
        "ads.alpha": ads.alpha,
        "ads.hover_alpha": ads.hover_alpha,
        "ads.hover_mu": ads.hover_mu,
        "ads.quat": ads.quat,
        "ads.log_scale": ads.log_scale,
        "ads.opacity_logit": ads.opacity_logit,
        "ads.sh": ads.sh,
        "handle_ids": model.handle_ids,
    }
    arrays.update(_net_arrays("rdf", model.rdf.net))
    arrays.update(_net_arrays("df", model.df.net))
    keys = sorted(state.arap_cache)
    arrays["arap.keys"] = np.array(keys, float)
    arrays["arap.solutions"] = (np.stack([state.arap_cache[k][0] for k in keys])
                                if keys else np.zeros((0, model.mesh.num_vertices, 3)))
    arrays["arap.solved_at"] = np.array(
        [state.arap_cache[k][1] for k in keys], np.int64)
    adam_arrays, adam_steps = _adam_arrays("adam", state.adam)
    arrays.update(adam_arrays)
    arrays["vadam.m"] = state.vertices_adam.m
    arrays["vadam.v"] = state.vertices_adam.v
    net_steps = []
    for i, st in enumerate(state.net_adam):
        arrays[f"net_adam.{i}.m"] = st.m
        arrays[f"net_adam.{i}.v"] = st.v
        net_steps.append(st.step)
    meta = {
        "config": cfg.to_dict(),
        "iteration": state.iteration,
        "rng_state": state.rng.bit_generator.state,
        "adam_steps": adam_steps,
        "vadam_step": state.vertices_adam.step,
        "net_adam_steps": net_steps,
        "rdf_skip": list(model.rdf.net.skip),
        "df_skip": list(model.df.net.skip),
        "metrics": state.metrics,
    }
    save_checkpoint(path, "stage2", arrays, meta)


def load_stage2(path):
    """Returns (state, config)."""
    stage, arrays, meta = load_checkpoint(path)
    if stage != "stage2":
        raise CheckpointError(f"{path}: stage2 required, found {stage!r}")
    cfg = TrainConfig.from_dict(meta["config"])
    mesh = TriMesh(np.array(arrays["mesh.vertices"], float),
                   np.array(arrays["mesh.faces"]),
                   np.array(arrays["mesh.deformed"], float))
    ads = AdsorbedGaussians(
        np.array(arrays["ads.facet_ids"]), np.array(arrays["ads.alpha"], float),
        np.array(arrays["ads.hover_alpha"], float),
        np.array(arrays["ads.hover_mu"], float),
        np.array(arrays["ads.quat"], float),
        np.array(arrays["ads.log_scale"], float),
        np.array(arrays["ads.opacity_logit"], float),
        np.array(arrays["ads.sh"], float))
    from .encoding import Encoding

    rdf = HoverField(_net_from_arrays("rdf", arrays, meta["rdf_skip"]),
                     Encoding(cfg.spatial_freqs))
    df = TimeField(_net_from_arrays("df", arrays, meta["df_skip"]),
                   Encoding(cfg.spatial_freqs), Encoding(cfg.temporal_freqs),
                   shlib.num_coeffs(cfg.sh_degree))
    model = HybridModel(mesh, ads, rdf, df, np.array(arrays["handle_ids"]),
                        cfg.sh_degree, cfg.rdf_enabled, cfg.scale_transfer_sqrt)
    arap = ArapSystem(mesh, model.handle_ids)
    adam = _adam_restore("adam", arrays, meta["adam_steps"],
                         {k: getattr(ads, k) for k in
                          ("alpha", "quat", "log_scale", "opacity_logit", "sh")})
    vertices_adam = AdamState(np.array(arrays["vadam.m"], float),
                              np.array(arrays["vadam.v"], float),
                              int(meta["vadam_step"]))
    net_adam = []
    for i, p in enumerate(rdf.net.parameters()):
        net_adam.append(AdamState(np.array(arrays[f"net_adam.{i}.m"], float),
                                  np.array(arrays[f"net_adam.{i}.v"], float),
                                  int(meta["net_adam_steps"][i]),
                                  weight_decay=cfg.mlp_weight_decay))
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    cache = {}
    for i, key in enumerate(np.array(arrays["arap.keys"], float)):
        cache[float(key)] = (np.array(arrays["arap.solutions"][i], float),
                             int(arrays["arap.solved_at"][i]))
    state = Stage2State(model, arap, adam, vertices_adam, net_adam, rng,
                        int(meta["iteration"]), list(meta["metrics"]), cache)
    return state, cfg
