"""Input validation helpers shared across the package.

Images are numpy arrays shaped [H, W, C] with C in {1, 3}, float values in
[0, 1]. Anything else is rejected here so the numeric code can assume a
clean input.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_image",
    "check_images",
    "check_same_shape",
    "as_float01",
]


def check_image(img, *, channels=(1, 3), name="image") -> np.ndarray:
    """Validate an [H, W, C] image in [0, 1] and return it as float64/float32.

    Raises ValueError on wrong rank, empty spatial dims, unexpected channel
    count, non-finite values, or values outside [0, 1].
    """
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"{name} must be [H, W, C], got shape {img.shape}")
    h, w, c = img.shape
    if h < 1 or w < 1:
        raise ValueError(f"{name} has empty spatial dims: {img.shape}")
    if c not in channels:
        raise ValueError(f"{name} must have channels in {channels}, got {c}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"{name} must be floating point in [0, 1], got dtype {img.dtype}")
    if not np.isfinite(img).all():
        raise ValueError(f"{name} contains NaN or Inf")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(
            f"{name} values must lie in [0, 1], got range "
            f"[{img.min():.4g}, {img.max():.4g}]"
        )
    return img


def check_images(imgs, *, channels=(1, 3), name="images") -> list[np.ndarray]:
    """Validate a sequence of images (sizes may differ)."""
    if len(imgs) == 0:
        raise ValueError(f"{name} is empty")
    return [check_image(im, channels=channels, name=f"{name}[{i}]") for i, im in enumerate(imgs)]


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} and {names[1]} shapes differ: {a.shape} vs {b.shape}")


def as_float01(img: np.ndarray) -> np.ndarray:
    """Convert an integer image to float64 in [0, 1]; pass floats through."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    if np.issubdtype(img.dtype, np.floating):
        return img
    raise ValueError(f"unsupported dtype {img.dtype}")
