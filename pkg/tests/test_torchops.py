"""The torch twins must agree with the numpy primitives."""

import numpy as np
import torch

from relight.imaging import gaussian_blur, hist_equalize, spatial_gradient
from relight.torchops import (
    bright_channel_t,
    forward_gradients,
    gaussian_blur_t,
    hist_equalize_t,
    ssim_t,
)

from oracles import ssim_window_reference


def to_t(img):
    return torch.from_numpy(img.transpose(2, 0, 1).copy())[None]


def to_np(t):
    return t[0].numpy().transpose(1, 2, 0)


def test_hist_equalize_matches_numpy(rng):
    img = rng.random((13, 17, 3))
    np.testing.assert_array_equal(to_np(hist_equalize_t(to_t(img))), hist_equalize(img))


def test_hist_equalize_batched(rng):
    batch = rng.random((4, 8, 8, 3))
    t = torch.from_numpy(batch.transpose(0, 3, 1, 2).copy())
    out = hist_equalize_t(t).numpy().transpose(0, 2, 3, 1)
    for i in range(4):
        np.testing.assert_array_equal(out[i], hist_equalize(batch[i]))


def test_gradients_match_numpy(rng):
    img = rng.random((9, 11, 3))
    gh, gv = forward_gradients(to_t(img))
    g = spatial_gradient(img)
    np.testing.assert_allclose(to_np(gh), g.horizontal, atol=1e-12)
    np.testing.assert_allclose(to_np(gv), g.vertical, atol=1e-12)


def test_blur_matches_numpy(rng):
    img = rng.random((40, 52, 3))
    for sigma in (5.0, 9.0, 15.0):
        ours = to_np(gaussian_blur_t(to_t(img), sigma))
        ref = gaussian_blur(img, sigma)
        np.testing.assert_allclose(ours, ref, atol=1e-6)


def test_blur_preserves_constant_and_is_differentiable():
    x = torch.full((1, 3, 16, 16), 0.25, dtype=torch.float64, requires_grad=True)
    out = gaussian_blur_t(x, 5.0)
    assert torch.allclose(out, torch.full_like(out, 0.25), atol=1e-6)
    out.mean().backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()


def test_bright_channel_t(rng):
    img = rng.random((6, 6, 3))
    out = bright_channel_t(to_t(img))
    np.testing.assert_allclose(to_np(out)[:, :, 0], img.max(axis=2))


class TestSsim:
    def test_self_similarity(self, rng):
        img = to_t(rng.random((16, 16, 3)))
        assert abs(float(ssim_t(img, img)) - 1.0) < 1e-9

    def test_matches_window_oracle(self, rng):
        a = rng.random((11, 11, 1))
        b = rng.random((11, 11, 1))
        ours = float(ssim_t(to_t(a), to_t(b)))
        assert abs(ours - ssim_window_reference(a[:, :, 0], b[:, :, 0])) < 1e-9

    def test_checkerboard_inversion_is_negative(self):
        board = np.indices((11, 11)).sum(axis=0) % 2
        a = board.astype(np.float64)[:, :, None]
        b = 1.0 - a
        assert float(ssim_t(to_t(a), to_t(b))) < 0
        assert ssim_window_reference(a[:, :, 0], b[:, :, 0]) < 0
