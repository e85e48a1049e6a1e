"""Photometric training loss: (1 - w) L1 + w DSSIM, with analytic gradient.

SSIM uses an 11x11 Gaussian window (sigma 1.5) with stabilizers
C1 = 0.01^2, C2 = 0.03^2 on [0,1] images. Windowed statistics are computed
with symmetric boundary padding so constant images keep their closed-form
SSIM everywhere; DSSIM = 1 - mean(SSIM map).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch

DSSIM_WEIGHT = 0.2
_C1 = 0.01**2
_C2 = 0.03**2
_WIN_SIZE = 11
_WIN_SIGMA = 1.5


def _gauss_kernel():
    r = np.arange(_WIN_SIZE) - (_WIN_SIZE - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * _WIN_SIGMA**2))
    return k / k.sum()


_K1D = _gauss_kernel()
_PAD = _WIN_SIZE // 2


def _sym_index(n: int) -> np.ndarray:
    idx = np.arange(-_PAD, n + _PAD)
    idx = np.where(idx < 0, -idx - 1, idx)
    return np.where(idx >= n, 2 * n - idx - 1, idx)


def _conv_axis(img: np.ndarray, axis: int) -> np.ndarray:
    n = img.shape[axis]
    padded = np.take(img, _sym_index(n), axis=axis)
    out = np.zeros_like(img)
    sl = [slice(None)] * img.ndim
    for i, w in enumerate(_K1D):
        sl[axis] = slice(i, i + n)
        out += w * padded[tuple(sl)]
    return out


def _conv_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    n = g.shape[axis]
    scatter_shape = list(g.shape)
    scatter_shape[axis] = n + 2 * _PAD
    scatter = np.zeros(scatter_shape)
    sl = [slice(None)] * g.ndim
    for i, w in enumerate(_K1D):
        sl[axis] = slice(i, i + n)
        scatter[tuple(sl)] += w * g
    out = np.zeros_like(g)
    idx = _sym_index(n)
    ix = [slice(None)] * g.ndim
    for p in range(n + 2 * _PAD):
        ix[axis] = idx[p]
        sp = [slice(None)] * g.ndim
        sp[axis] = p
        out[tuple(ix)] += scatter[tuple(sp)]
    return out


def _blur(img: np.ndarray) -> np.ndarray:
    return _conv_axis(_conv_axis(img, 0), 1)


def _blur_adjoint(g: np.ndarray) -> np.ndarray:
    return _conv_axis_adjoint(_conv_axis_adjoint(g, 1), 0)


def ssim(a: np.ndarray, b: np.ndarray):
    """Mean SSIM and the per-pixel statistics needed for its gradient."""
    mu_a = _blur(a)
    mu_b = _blur(b)
    m_aa = _blur(a * a)
    m_bb = _blur(b * b)
    m_ab = _blur(a * b)
    var_a = m_aa - mu_a**2
    var_b = m_bb - mu_b**2
    cov = m_ab - mu_a * mu_b
    A1 = 2.0 * mu_a * mu_b + _C1
    B1 = mu_a**2 + mu_b**2 + _C1
    A2 = 2.0 * cov + _C2
    B2 = var_a + var_b + _C2
    S = (A1 * A2) / (B1 * B2)
    return float(S.mean()), (mu_a, mu_b, A1, B1, A2, B2, S)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def image_loss(render: np.ndarray, gt: np.ndarray, dssim_weight: float = DSSIM_WEIGHT):
    """(1-w) L1 + w (1 - SSIM). Returns (loss, dLoss/dRender)."""
    render = np.asarray(render, float)
    gt = np.asarray(gt, float)
    if render.shape != gt.shape:
        raise DimensionMismatch(f"render {render.shape} vs ground truth {gt.shape}")
    if min(render.shape[0], render.shape[1]) < _WIN_SIZE // 2 + 1:
        raise DimensionMismatch("image smaller than half the SSIM window")
    n = render.size

    diff = render - gt
    l1 = float(np.abs(diff).mean())
    mean_ssim, (mu_a, mu_b, A1, B1, A2, B2, S) = ssim(render, gt)
    loss = (1.0 - dssim_weight) * l1 + dssim_weight * (1.0 - mean_ssim)

    gS = np.full_like(render, -dssim_weight / n)
    gA1 = gS * A2 / (B1 * B2)
    gB1 = -gS * S / B1
    gA2 = gS * A1 / (B1 * B2)
    gB2 = -gS * S / B2
    # var/cov depend on both the blurred moments and the blurred means
    g_mab = 2.0 * gA2
    g_maa = gB2
    g_mu_a = 2.0 * mu_b * gA1 + 2.0 * mu_a * gB1 - mu_b * (2.0 * gA2) - 2.0 * mu_a * gB2
    grad = (_blur_adjoint(g_mu_a)
            + _blur_adjoint(g_maa) * 2.0 * render
            + _blur_adjoint(g_mab) * gt
            + (1.0 - dssim_weight) * np.sign(diff) / n)
    return loss, grad
