import numpy as np
import pytest

from relight.metrics import psnr, ssim


class TestPsnr:
    def test_identical_capped(self, rng):
        img = rng.random((8, 8, 3))
        assert psnr(img, img) == 100.0

    def test_constant_halves(self):
        a = np.full((10, 10, 3), 0.5)
        b = np.full((10, 10, 3), 0.25)
        assert abs(psnr(a, b) - 10 * np.log10(1 / 0.0625)) < 1e-9
        assert abs(psnr(a, b) - 12.0412) < 1e-3

    def test_symmetric(self, rng):
        a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise(self, rng):
        img = np.full((32, 32, 3), 0.5)
        values = []
        for sigma in (0.01, 0.05, 0.1):
            noisy = np.clip(img + rng.normal(0, sigma, img.shape), 0, 1)
            values.append(psnr(img, noisy))
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical(self, rng):
        img = rng.random((16, 16, 3))
        assert abs(ssim(img, img) - 1.0) < 1e-9

    def test_symmetric(self, rng):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_constant_shift_below_one(self, rng):
        img = 0.3 + 0.4 * rng.random((16, 16, 3))
        shifted = img + 0.05
        assert ssim(img, np.clip(shifted, 0, 1)) < 1.0

    def test_checkerboard_inversion_negative(self):
        board = (np.indices((11, 11)).sum(axis=0) % 2).astype(np.float64)
        a = board[:, :, None]
        assert ssim(a, 1.0 - a) < 0

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8, 1)), np.zeros((8, 8, 1)))
