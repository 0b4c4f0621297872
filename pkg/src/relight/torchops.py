"""Torch twins of the image primitives, for use inside differentiable losses.

Tensors are [N, C, H, W] in [0, 1]. Each op matches its numpy counterpart in
`imaging` (same kernels, same padding, same binning), which the test suite
asserts.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .imaging import HIST_BINS, gaussian_kernel_1d

__all__ = [
    "hist_equalize_t",
    "bright_channel_t",
    "forward_gradients",
    "gaussian_blur_t",
    "ssim_t",
]


def hist_equalize_t(x: torch.Tensor) -> torch.Tensor:
    """Per-image, per-channel 256-bin histogram equalization (no gradient)."""
    with torch.no_grad():
        n, c, h, w = x.shape
        idx = torch.clamp(torch.floor(x * (HIST_BINS - 1) + 0.5), 0, HIST_BINS - 1).long()
        flat = idx.reshape(n * c, h * w)
        offsets = torch.arange(n * c, device=x.device).unsqueeze(1) * HIST_BINS
        hist = torch.bincount((flat + offsets).reshape(-1), minlength=n * c * HIST_BINS)
        hist = hist.reshape(n * c, HIST_BINS)
        cdf = torch.cumsum(hist, dim=1).to(x.dtype) / (h * w)
        out = torch.gather(cdf, 1, flat)
        return out.reshape(n, c, h, w)


def bright_channel_t(x: torch.Tensor) -> torch.Tensor:
    """Channel-wise maximum, keeping a singleton channel dim."""
    return x.max(dim=1, keepdim=True).values


def forward_gradients(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward differences along width / height, zero at the final column/row."""
    gh = torch.zeros_like(x)
    gv = torch.zeros_like(x)
    gh[:, :, :, :-1] = x[:, :, :, 1:] - x[:, :, :, :-1]
    gv[:, :, :-1, :] = x[:, :, 1:, :] - x[:, :, :-1, :]
    return gh, gv


def _reflect_indices(n: int, r: int, device) -> torch.Tensor:
    # Half-sample (edge-repeating) periodic reflection, matching scipy
    # mode="reflect" for any pad width; torch's built-in "reflect" is
    # whole-sample and capped at n-1.
    p = torch.arange(-r, n + r, device=device)
    m = torch.remainder(p, 2 * n)
    return torch.where(m < n, m, 2 * n - 1 - m)


def _reflect_pad(x: torch.Tensor, r: int) -> torch.Tensor:
    idx_h = _reflect_indices(x.shape[-2], r, x.device)
    idx_w = _reflect_indices(x.shape[-1], r, x.device)
    return x.index_select(2, idx_h).index_select(3, idx_w)


def gaussian_blur_t(x: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur with reflective padding, same taps as imaging."""
    k = torch.as_tensor(gaussian_kernel_1d(sigma), dtype=x.dtype, device=x.device)
    r = k.numel() // 2
    c = x.shape[1]
    xp = _reflect_pad(x, r)
    kv = k.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    kh = k.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    out = F.conv2d(xp, kv, groups=c)
    out = F.conv2d(out, kh, groups=c)
    return out


def _ssim_window(dtype, device) -> torch.Tensor:
    # 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
    coords = torch.arange(11, dtype=dtype, device=device) - 5
    g = torch.exp(-0.5 * (coords / 1.5) ** 2)
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean local SSIM over valid 11x11 windows, averaged across channels.

    Constants C1 = 0.01^2, C2 = 0.03^2 on the [0, 1] range. Differentiable.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[-1] < 11 or a.shape[-2] < 11:
        raise ValueError("image smaller than the 11x11 SSIM window")
    c1, c2 = 0.01**2, 0.03**2
    c = a.shape[1]
    win = _ssim_window(a.dtype, a.device).view(1, 1, 11, 11).expand(c, 1, 11, 11)

    mu_a = F.conv2d(a, win, groups=c)
    mu_b = F.conv2d(b, win, groups=c)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = F.conv2d(a * a, win, groups=c) - mu_aa
    var_b = F.conv2d(b * b, win, groups=c) - mu_bb
    cov = F.conv2d(a * b, win, groups=c) - mu_ab

    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return (num / den).mean()
