"""Deterministic image primitives: histogram equalization, bright channel,
finite-difference gradients, Gaussian blur, and PNG/JPEG I/O.

All functions are pure (no shared mutable state) and operate on [H, W, C]
float arrays in [0, 1].
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .validation import as_float01, check_image

__all__ = [
    "GradientPair",
    "BlurBank",
    "hist_equalize",
    "bright_channel",
    "spatial_gradient",
    "gaussian_kernel_1d",
    "gaussian_blur",
    "load_image",
    "save_image",
    "ImageIOError",
    "UnreadableFileError",
    "UnsupportedFormatError",
    "CorruptImageError",
    "audit_file_reads",
]

HIST_BINS = 256


class ImageIOError(Exception):
    """Base class for image I/O failures."""


class UnreadableFileError(ImageIOError):
    """File missing or not readable."""


class UnsupportedFormatError(ImageIOError):
    """Container format other than PNG/JPEG."""


class CorruptImageError(ImageIOError):
    """File identified but undecodable (truncated or damaged)."""


@dataclass
class GradientPair:
    """Forward-difference gradients of an image, one array per direction.

    The last column (horizontal) / row (vertical) is zero, so a constant
    image has exactly zero gradient.
    """

    horizontal: np.ndarray
    vertical: np.ndarray


@dataclass
class BlurBank:
    """Gaussian blur scales with per-scale weights for multi-scale matching."""

    kernels: list[tuple[float, float]] = field(
        default_factory=lambda: [(5.0, 0.25), (9.0, 0.5), (15.0, 1.0)]
    )

    def __post_init__(self):
        for sigma, weight in self.kernels:
            if sigma <= 0 or weight <= 0:
                raise ValueError(f"sigma and weight must be positive, got ({sigma}, {weight})")


def quantize_to_bins(img: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Map [0, 1] values to integer bin indices 0..bins-1 (round half up)."""
    return np.clip(np.floor(img * (bins - 1) + 0.5), 0, bins - 1).astype(np.int64)


def hist_equalize(img: np.ndarray, per_channel: bool = True) -> np.ndarray:
    """Histogram equalization over a 256-bin histogram.

    Each pixel maps to the empirical CDF evaluated at the pixel's bin,
    normalized by the pixel count, so outputs lie in (0, 1]. By default each
    channel is equalized against its own histogram; per_channel=False pools
    one histogram across all channels instead.
    """
    img = check_image(img)
    h, w, c = img.shape
    out = np.empty_like(img, dtype=np.float64)
    idx = quantize_to_bins(img)
    if per_channel:
        n = h * w
        for ch in range(c):
            hist = np.bincount(idx[:, :, ch].ravel(), minlength=HIST_BINS)
            cdf = np.cumsum(hist) / n
            out[:, :, ch] = cdf[idx[:, :, ch]]
    else:
        hist = np.bincount(idx.ravel(), minlength=HIST_BINS)
        cdf = np.cumsum(hist) / (h * w * c)
        out = cdf[idx]
    return out


def bright_channel(img: np.ndarray) -> np.ndarray:
    """Per-pixel maximum over the three color channels, as an [H, W, 1] map."""
    img = check_image(img, channels=(3,), name="bright_channel input")
    return img.max(axis=2, keepdims=True)


def spatial_gradient(img: np.ndarray) -> GradientPair:
    """Forward differences along width (horizontal) and height (vertical).

    The final column/row is padded with zero gradient so output shapes match
    the input.
    """
    img = check_image(img)
    gh = np.zeros_like(img)
    gv = np.zeros_like(img)
    gh[:, :-1, :] = img[:, 1:, :] - img[:, :-1, :]
    gv[:-1, :, :] = img[1:, :, :] - img[:-1, :, :]
    return GradientPair(horizontal=gh, vertical=gv)


def gaussian_kernel_1d(sigma: float, dtype=np.float64) -> np.ndarray:
    """Normalized 1-D Gaussian taps; side length = smallest odd int >= 6*sigma + 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    size = int(np.ceil(6 * sigma + 1))
    if size % 2 == 0:
        size += 1
    radius = size // 2
    x = np.arange(-radius, radius + 1, dtype=dtype)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable 2-D Gaussian blur with reflective boundary padding.

    The edge-repeating reflection keeps the image mean exactly unchanged for
    a kernel that sums to 1.
    """
    img = check_image(img)
    k = gaussian_kernel_1d(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# I/O with a file-access audit hook (used by tests to prove the training
# loops never touch held-out files).

_audit_lock = threading.Lock()
_audit_sinks: list[list[str]] = []


@contextlib.contextmanager
def audit_file_reads():
    """Context manager yielding a list that collects every path load_image opens."""
    sink: list[str] = []
    with _audit_lock:
        _audit_sinks.append(sink)
    try:
        yield sink
    finally:
        with _audit_lock:
            _audit_sinks.remove(sink)


def _record_read(path: str) -> None:
    with _audit_lock:
        for sink in _audit_sinks:
            sink.append(path)


_SUPPORTED_FORMATS = {"PNG", "JPEG"}


def load_image(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG/JPEG as an [H, W, C] float64 array in [0, 1]."""
    path = Path(path)
    _record_read(str(path))
    try:
        f = open(path, "rb")
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        raise UnreadableFileError(f"cannot read {path}: {e}") from e
    with f:
        try:
            with Image.open(f) as pil:
                fmt = pil.format
                if fmt not in _SUPPORTED_FORMATS:
                    raise UnsupportedFormatError(f"{path}: format {fmt} not supported (PNG/JPEG only)")
                pil.load()
                if pil.mode in ("I;16", "I;16B", "I;16L", "I"):
                    arr = np.asarray(pil, dtype=np.uint16)[:, :, None]
                elif pil.mode == "L":
                    arr = np.asarray(pil, dtype=np.uint8)[:, :, None]
                else:
                    arr = np.asarray(pil.convert("RGB"), dtype=np.uint8)
        except UnidentifiedImageError as e:
            raise CorruptImageError(f"{path}: undecodable image data") from e
        except OSError as e:
            raise CorruptImageError(f"{path}: truncated or damaged file: {e}") from e
    return as_float01(arr)


def save_image(img: np.ndarray, path) -> None:
    """Save an image as 8-bit PNG (quantized by rounding)."""
    img = check_image(img)
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise UnsupportedFormatError(f"output must be .png, got {path.suffix!r}")
    arr = np.rint(img * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")
