"""Gaussian primitive containers.

A GaussianCloud holds the activated per-primitive fields consumed by the
renderer: positions, (possibly unnormalized) rotation quaternions, strictly
positive per-axis scales, opacities in [0,1], and SH color coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh as shlib


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, float)))


def inverse_sigmoid(y):
    y = np.asarray(y, float)
    return np.log(y / (1.0 - y))


@dataclass
class GaussianCloud:
    mu: np.ndarray        # (N,3)
    quat: np.ndarray      # (N,4) wxyz, normalized on use
    scale: np.ndarray     # (N,3) > 0
    opacity: np.ndarray   # (N,) in [0,1]
    sh: np.ndarray        # (N,K,3)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, float).reshape(-1, 3)
        n = len(self.mu)
        self.quat = np.asarray(self.quat, float).reshape(n, 4)
        self.scale = np.asarray(self.scale, float).reshape(n, 3)
        self.opacity = np.asarray(self.opacity, float).reshape(n)
        sh = np.asarray(self.sh, float)
        if sh.ndim == 3:
            self.sh = sh.reshape(n, sh.shape[1], 3)
        elif n == 0:
            self.sh = sh.reshape(0, 1, 3)
        else:
            self.sh = sh.reshape(n, -1, 3)
        shlib.degree_for(self.sh.shape[1])  # validates the coefficient count

    def __len__(self) -> int:
        return len(self.mu)

    @property
    def sh_degree(self) -> int:
        return shlib.degree_for(self.sh.shape[1])

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.mu.copy(), self.quat.copy(), self.scale.copy(),
                             self.opacity.copy(), self.sh.copy())

    def validate(self):
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("non-finite positions")
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")
        if np.any((self.opacity < 0) | (self.opacity > 1)):
            raise ValueError("opacity outside [0,1]")
        if not np.all(np.isfinite(self.sh)):
            raise ValueError("non-finite SH coefficients")

    @staticmethod
    def empty(sh_degree: int = 0) -> "GaussianCloud":
        k = shlib.num_coeffs(sh_degree)
        return GaussianCloud(np.zeros((0, 3)), np.zeros((0, 4)), np.ones((0, 3)),
                             np.zeros(0), np.zeros((0, k, 3)))
