import numpy as np
import pytest

from meshsplat.errors import DimensionMismatch
from meshsplat.gradcheck import check_image_loss
from meshsplat.losses import image_loss, psnr, ssim


def test_identical_images_zero_loss():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    loss, grad = image_loss(img, img.copy())
    assert loss == 0.0


def test_constant_image_closed_form():
    # constant 0.3 vs 0.4: windowed variances vanish, the contrast/structure
    # factor cancels to 1 and only the luminance term remains
    a = np.full((16, 16, 3), 0.3)
    b = np.full((16, 16, 3), 0.4)
    expected_ssim = (2 * 0.3 * 0.4 + 1e-4) / (0.3**2 + 0.4**2 + 1e-4)
    s, _ = ssim(a, b)
    assert abs(s - expected_ssim) < 1e-12
    loss, _ = image_loss(a, b)
    expected = 0.8 * 0.1 + 0.2 * (1.0 - expected_ssim)
    assert abs(loss - 0.0879968012794882) < 1e-12
    assert abs(loss - expected) < 1e-12


def test_loss_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a = rng.uniform(0, 1, (12, 12, 3))
        b = rng.uniform(0, 1, (12, 12, 3))
        loss, _ = image_loss(a, b)
        assert loss >= 0.0


def test_gradient_matches_finite_differences():
    assert check_image_loss(0) <= 1e-4


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        image_loss(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


def test_psnr():
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 0.1)
    assert abs(psnr(a, b) - 20.0) < 1e-9
    assert psnr(a, a) == float("inf")
