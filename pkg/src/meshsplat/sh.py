"""Real spherical harmonics color evaluation (degrees 0..3) with backward."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def degree_for(k: int) -> int:
    deg = int(round(np.sqrt(k))) - 1
    if num_coeffs(deg) != k:
        raise ValueError(f"{k} is not a valid SH coefficient count")
    return deg


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values (N, K) at unit directions (N,3)."""
    dirs = np.atleast_2d(dirs)
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    B = np.empty((n, num_coeffs(degree)))
    B[:, 0] = C0
    if degree >= 1:
        B[:, 1] = -C1 * y
        B[:, 2] = C1 * z
        B[:, 3] = -C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        B[:, 4] = C2[0] * x * y
        B[:, 5] = C2[1] * y * z
        B[:, 6] = C2[2] * (2.0 * zz - xx - yy)
        B[:, 7] = C2[3] * x * z
        B[:, 8] = C2[4] * (xx - yy)
    if degree >= 3:
        B[:, 9] = C3[0] * y * (3.0 * xx - yy)
        B[:, 10] = C3[1] * x * y * z
        B[:, 11] = C3[2] * y * (4.0 * zz - xx - yy)
        B[:, 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        B[:, 13] = C3[4] * x * (4.0 * zz - xx - yy)
        B[:, 14] = C3[5] * z * (xx - yy)
        B[:, 15] = C3[6] * x * (xx - 3.0 * yy)
    return B


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(dir): (N, K, 3)."""
    dirs = np.atleast_2d(dirs)
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros(n)
    G = np.zeros((n, num_coeffs(degree), 3))
    if degree >= 1:
        G[:, 1] = np.stack([zero, -C1 * np.ones(n), zero], axis=1)
        G[:, 2] = np.stack([zero, zero, C1 * np.ones(n)], axis=1)
        G[:, 3] = np.stack([-C1 * np.ones(n), zero, zero], axis=1)
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        G[:, 4] = C2[0] * np.stack([y, x, zero], axis=1)
        G[:, 5] = C2[1] * np.stack([zero, z, y], axis=1)
        G[:, 6] = C2[2] * np.stack([-2 * x, -2 * y, 4 * z], axis=1)
        G[:, 7] = C2[3] * np.stack([z, zero, x], axis=1)
        G[:, 8] = C2[4] * np.stack([2 * x, -2 * y, zero], axis=1)
    if degree >= 3:
        G[:, 9] = C3[0] * np.stack([6 * x * y, 3 * xx - 3 * yy, zero], axis=1)
        G[:, 10] = C3[1] * np.stack([y * z, x * z, x * y], axis=1)
        G[:, 11] = C3[2] * np.stack([-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z], axis=1)
        G[:, 12] = C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy], axis=1)
        G[:, 13] = C3[4] * np.stack([4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z], axis=1)
        G[:, 14] = C3[5] * np.stack([2 * x * z, -2 * y * z, xx - yy], axis=1)
        G[:, 15] = C3[6] * np.stack([3 * xx - 3 * yy, -6 * x * y, zero], axis=1)
    return G


def sh_to_color(sh: np.ndarray, view_dir: np.ndarray):
    """Colors (N,3) from coefficients (N,K,3) and unit view dirs; clamped >= 0.

    Returns (colors, cache) where cache feeds sh_to_color_backward.
    """
    sh = np.asarray(sh, float)
    if sh.ndim == 2:
        sh = sh[None]
    dirs = np.atleast_2d(view_dir)
    degree = degree_for(sh.shape[1])
    B = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", B, sh) + 0.5
    color = np.maximum(raw, 0.0)
    return color, (sh, dirs, degree, B, raw >= 0.0)


def sh_to_color_backward(cache, dcolor):
    """VJP: returns (dsh, ddirs)."""
    sh, dirs, degree, B, live = cache
    g = np.asarray(dcolor, float) * live
    dsh = B[:, :, None] * g[:, None, :]
    dB = np.einsum("nc,nkc->nk", g, sh)
    ddirs = np.einsum("nk,nkd->nd", dB, sh_basis_grad(dirs, degree))
    return dsh, ddirs
