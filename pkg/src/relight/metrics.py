"""Full-reference image quality metrics: PSNR and SSIM.

Both take [H, W, C] arrays in [0, 1] and are symmetric in their arguments.
The no-reference NIQE metric lives in `relight.niqe`.
"""

from __future__ import annotations

import numpy as np
import torch

from .torchops import ssim_t
from .validation import check_image, check_same_shape

__all__ = ["psnr", "ssim"]

PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 100."""
    a = check_image(a)
    b = check_image(b)
    check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity (11x11 Gaussian window, sigma 1.5).

    Channels are averaged; windows are valid-only, so images must be at
    least 11 pixels on each side.
    """
    a = check_image(a)
    b = check_image(b)
    check_same_shape(a, b)
    ta = torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))[None].double()
    tb = torch.from_numpy(np.ascontiguousarray(b.transpose(2, 0, 1)))[None].double()
    with torch.no_grad():
        return float(ssim_t(ta, tb))
