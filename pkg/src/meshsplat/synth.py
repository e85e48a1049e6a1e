"""Synthetic dynamic scenes with exact analytic ground truth, rendered by
this package's own rasterizer.

Three generators: a static Gaussian sphere shell, the same shell swept
sideways on a sine (center (A sin(2 pi t), 0, 0)), and a bar of Gaussians
bending about one end by a time-scaled rotation. Cameras sit on a circle
around the object; every frame pairs one pose with one timestamp.
"""

from __future__ import annotations

import numpy as np

from .camera import orbit_camera
from .datasets import Dataset, Frame
from .gaussians import GaussianCloud
from .geom import rotation_about_axis
from .rasterizer import rasterize

KINDS = ("static-sphere", "oscillating-sphere", "bending-bar")
FOV_X = 0.8
CAMERA_DISTANCE = 3.0
CAMERA_ELEVATION = 0.35
OSCILLATION_AMPLITUDE = 0.3
BEND_MAX_ANGLE = 0.8
NUM_TEST_FRAMES = 5


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([np.sin(phi) * np.cos(theta),
                     np.sin(phi) * np.sin(theta),
                     np.cos(phi)], axis=1)


def _sphere_cloud(seed: int) -> GaussianCloud:
    rng = np.random.default_rng(seed)
    n = 220
    pos = 0.5 * _fibonacci_sphere(n)
    scale = np.full((n, 3), 0.075) * np.exp(rng.normal(0.0, 0.1, (n, 3)))
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    opacity = np.full(n, 0.92)
    color = 0.5 + 0.3 * pos / np.linalg.norm(pos, axis=1, keepdims=True)
    from .sh import C0

    sh = ((color - 0.5) / C0)[:, None, :]
    return GaussianCloud(pos, quat, scale, opacity, sh)


def _bar_cloud(seed: int) -> GaussianCloud:
    rng = np.random.default_rng(seed)
    xs = np.linspace(0.0, 1.0, 12)
    side = np.array([[y, z] for y in (-0.08, 0.08) for z in (-0.08, 0.08)])
    pos = np.array([[x, y, z] for x in xs for y, z in side])
    pos = pos - np.array([0.5, 0.0, 0.0])  # center the bar on the origin
    n = len(pos)
    scale = np.full((n, 3), 0.07) * np.exp(rng.normal(0.0, 0.1, (n, 3)))
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    opacity = np.full(n, 0.92)
    u = (pos[:, 0] + 0.5)
    color = np.stack([0.25 + 0.5 * u, 0.35 + 0.2 * np.cos(3 * u), 0.7 - 0.4 * u], axis=1)
    from .sh import C0

    sh = ((color - 0.5) / C0)[:, None, :]
    return GaussianCloud(pos, quat, scale, opacity, sh)


def gt_cloud_at(kind: str, base: GaussianCloud, t: float) -> GaussianCloud:
    """Exact ground-truth cloud at time t (the emitted-metadata motion law)."""
    cloud = base.copy()
    if kind == "static-sphere":
        return cloud
    if kind == "oscillating-sphere":
        cloud.mu = cloud.mu + np.array(
            [OSCILLATION_AMPLITUDE * np.sin(2.0 * np.pi * t), 0.0, 0.0])
        return cloud
    if kind == "bending-bar":
        angles = BEND_MAX_ANGLE * np.sin(2.0 * np.pi * t) * (cloud.mu[:, 0] + 0.5)
        axes = np.zeros((len(cloud), 3, 3))
        for g in range(len(cloud)):
            axes[g] = rotation_about_axis((0.0, 0.0, 1.0), angles[g])
        pivot = np.array([-0.5, 0.0, 0.0])
        cloud.mu = np.einsum("gij,gj->gi", axes, cloud.mu - pivot) + pivot
        return cloud
    raise ValueError(f"unknown synthetic kind {kind!r}")


def synth_scene(kind: str, resolution: int = 64, frames: int = 20, seed: int = 0):
    """Build (dataset, metadata). Ground truth comes from this rasterizer."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    base = _sphere_cloud(seed) if kind != "bending-bar" else _bar_cloud(seed)
    background = np.zeros(3)

    def make_frame(azimuth: float, t: float, split: str) -> Frame:
        cam = orbit_camera(azimuth, CAMERA_ELEVATION, CAMERA_DISTANCE,
                           (0.0, 0.0, 0.0), FOV_X, resolution, resolution,
                           near=0.1, far=20.0)
        cloud = gt_cloud_at(kind, base, t)
        out = rasterize(cloud, cam, background)
        return Frame(cam, t, split, image=out.color)

    frame_list = []
    for k in range(frames):
        az = 2.0 * np.pi * k / frames
        t = k / max(frames - 1, 1)
        frame_list.append(make_frame(az, t, "train"))
    for j in range(NUM_TEST_FRAMES):
        k = (j + 0.5) * frames / NUM_TEST_FRAMES
        az = 2.0 * np.pi * k / frames
        t = min(k / max(frames - 1, 1), 1.0)
        frame_list.append(make_frame(az, t, "test"))

    meta = {
        "kind": kind,
        "resolution": resolution,
        "frames": frames,
        "seed": seed,
        "fov_x": FOV_X,
        "camera_distance": CAMERA_DISTANCE,
        "camera_elevation": CAMERA_ELEVATION,
        "oscillation_amplitude": OSCILLATION_AMPLITUDE,
        "bend_max_angle": BEND_MAX_ANGLE,
        "num_gaussians": len(base),
        "background": background.tolist(),
    }
    return Dataset(frame_list), meta, base
