"""Pinhole camera with an OpenGL-style axis convention.

Camera space: x right, y up, camera looks along -z. A world point p maps to
p_cam = R @ p + t and its positive viewing depth is d = -p_cam.z. Pixel
coordinates are continuous with pixel (i, j) centered at (j + 0.5, i + 0.5);
u grows with x, v grows downward (negated y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    R: np.ndarray                 # (3,3) world-to-camera rotation
    t: np.ndarray                 # (3,) world-to-camera translation
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.R = np.asarray(self.R, float).reshape(3, 3)
        self.t = np.asarray(self.t, float).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.near > 0 and self.far > self.near):
            raise ValueError("need 0 < near < far")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    def world_to_cam(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, float) @ self.R.T + self.t

    def project_points(self, p: np.ndarray):
        """World points (N,3) -> pixel coords (N,2) and positive depths (N,)."""
        pc = self.world_to_cam(np.atleast_2d(p))
        d = -pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.cx + self.fx * pc[:, 0] / d
            v = self.cy - self.fy * pc[:, 1] / d
        return np.stack([u, v], axis=1), d

    def to_dict(self) -> dict:
        return {
            "R": self.R.tolist(),
            "t": self.t.tolist(),
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "near": self.near,
            "far": self.far,
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            np.array(d["R"], float), np.array(d["t"], float),
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]), float(d["near"]), float(d["far"]),
        )


def look_at(eye, target, up, fov_x: float, width: int, height: int,
            near: float = 0.01, far: float = 100.0) -> Camera:
    """Camera at `eye` looking at `target`; fov_x is the horizontal FOV in radians."""
    eye = np.asarray(eye, float)
    target = np.asarray(target, float)
    up = np.asarray(up, float)
    z = eye - target
    z = z / np.linalg.norm(z)
    x = np.cross(up, z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ValueError("up vector parallel to view direction")
    x = x / nx
    y = np.cross(z, x)
    c2w = np.stack([x, y, z], axis=1)
    R = c2w.T
    t = -R @ eye
    fx = width / (2.0 * np.tan(fov_x / 2.0))
    fy = fx
    return Camera(R, t, fx, fy, width / 2.0, height / 2.0, width, height, near, far)


def orbit_camera(azimuth: float, elevation: float, distance: float, target,
                 fov_x: float, width: int, height: int,
                 near: float = 0.01, far: float = 100.0) -> Camera:
    """Orbit around `target` with world +z up; angles in radians."""
    target = np.asarray(target, float)
    ce = np.cos(elevation)
    eye = target + distance * np.array(
        [ce * np.cos(azimuth), ce * np.sin(azimuth), np.sin(elevation)]
    )
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.sin(elevation)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    return look_at(eye, target, up, fov_x, width, height, near, far)
