"""No-reference image quality scoring from natural-scene statistics.

An image is scored by the Mahalanobis-style distance between the Gaussian
fitted to its local normalized-luminance features and a model fitted on
pristine images. Lower is better.

Conventions fixed here: luma weights (0.299, 0.587, 0.114), 96-pixel patches
at two scales (full and 2x2-average-pool half), 18 asymmetric-generalized-
Gaussian features per patch per scale (36 total), sharpness-based patch
selection at 0.75 of peak during fitting, and patch features pooled over the
image and its horizontal mirror so scores are exactly flip-invariant.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import gamma as gamma_fn

from .validation import check_image

__all__ = ["NiqeModel", "niqe", "fit_niqe_model"]

PATCH_SIZE = 96
FEATURE_DIM = 36
SHARPNESS_FRACTION = 0.75
RIDGE = 1e-6
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_GAMMA_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_R_GAMMA = (gamma_fn(2.0 / _GAMMA_GRID) ** 2) / (
    gamma_fn(1.0 / _GAMMA_GRID) * gamma_fn(3.0 / _GAMMA_GRID)
)


@dataclass
class NiqeModel:
    """Gaussian model (mean + covariance) of pristine-patch features."""

    mean: np.ndarray
    cov: np.ndarray
    patch_size: int = PATCH_SIZE
    feature_dim: int = FEATURE_DIM
    corpus_hash: str = ""

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.shape != (self.feature_dim,):
            raise ValueError(f"mean must have shape ({self.feature_dim},)")
        if self.cov.shape != (self.feature_dim, self.feature_dim):
            raise ValueError(f"cov must be {self.feature_dim}x{self.feature_dim}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -1e-8:
            raise ValueError("covariance must be positive semi-definite")

    def save(self, path) -> None:
        header = json.dumps(
            {
                "patch_size": self.patch_size,
                "feature_dim": self.feature_dim,
                "corpus_hash": self.corpus_hash,
            }
        )
        np.savez(Path(path), mean=self.mean, cov=self.cov, header=np.array(header))

    @classmethod
    def load(cls, path) -> "NiqeModel":
        with np.load(Path(path)) as blob:
            header = json.loads(str(blob["header"]))
            return cls(
                mean=blob["mean"],
                cov=blob["cov"],
                patch_size=int(header["patch_size"]),
                feature_dim=int(header["feature_dim"]),
                corpus_hash=header["corpus_hash"],
            )


def _to_gray255(img: np.ndarray) -> np.ndarray:
    img = check_image(img)
    if img.shape[2] == 3:
        gray = img @ LUMA_WEIGHTS
    else:
        gray = img[:, :, 0]
    return gray * 255.0


def _gauss_window(radius: int = 3, sigma: float = 7.0 / 6.0) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _local_stats(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = _gauss_window()
    mu = ndimage.correlate1d(gray, w, axis=0, mode="nearest")
    mu = ndimage.correlate1d(mu, w, axis=1, mode="nearest")
    mu2 = ndimage.correlate1d(gray * gray, w, axis=0, mode="nearest")
    mu2 = ndimage.correlate1d(mu2, w, axis=1, mode="nearest")
    sigma = np.sqrt(np.abs(mu2 - mu * mu))
    return mu, sigma


def _mscn(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu, sigma = _local_stats(gray)
    return (gray - mu) / (sigma + 1.0), sigma


def _fit_aggd(vec: np.ndarray) -> tuple[float, float, float]:
    """Estimate (alpha, beta_left, beta_right) of an asymmetric generalized
    Gaussian by the moment-matching grid search."""
    neg = vec[vec < 0]
    pos = vec[vec > 0]
    left_std = np.sqrt(np.mean(neg**2)) if neg.size else 1e-12
    right_std = np.sqrt(np.mean(pos**2)) if pos.size else 1e-12
    left_std = max(left_std, 1e-12)
    right_std = max(right_std, 1e-12)
    gamma_hat = left_std / right_std
    mean_sq = np.mean(vec**2)
    r_hat = np.mean(np.abs(vec)) ** 2 / mean_sq if mean_sq > 0 else 1e-12
    r_hat_norm = r_hat * (gamma_hat**3 + 1) * (gamma_hat + 1) / (gamma_hat**2 + 1) ** 2
    alpha = _GAMMA_GRID[np.argmin((_R_GAMMA - r_hat_norm) ** 2)]
    scale = np.sqrt(gamma_fn(1.0 / alpha) / gamma_fn(3.0 / alpha))
    return float(alpha), float(left_std * scale), float(right_std * scale)


def _patch_features(patch: np.ndarray) -> np.ndarray:
    """The 18 natural-scene-statistics features of one MSCN patch."""
    feats = []
    alpha, bl, br = _fit_aggd(patch.ravel())
    feats.extend([alpha, (bl + br) / 2.0])
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        prod = patch * np.roll(np.roll(patch, dy, axis=0), dx, axis=1)
        alpha, bl, br = _fit_aggd(prod.ravel())
        eta = (br - bl) * (gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha))
        feats.extend([alpha, eta, bl, br])
    return np.array(feats)


def _half_scale(gray: np.ndarray) -> np.ndarray:
    h, w = gray.shape
    h2, w2 = h // 2 * 2, w // 2 * 2
    return gray[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))


def _image_patch_features(
    gray: np.ndarray, patch_size: int, select_sharp: bool
) -> np.ndarray:
    """Per-patch 36-dim features at two scales; rows are patches."""
    ny, nx = gray.shape[0] // patch_size, gray.shape[1] // patch_size
    if ny * nx < 1:
        return np.zeros((0, FEATURE_DIM))
    mscn1, sigma1 = _mscn(gray)
    mscn2, _ = _mscn(_half_scale(gray))
    half = patch_size // 2

    rows = []
    sharp = np.empty(ny * nx)
    for iy in range(ny):
        for ix in range(nx):
            y, x = iy * patch_size, ix * patch_size
            f1 = _patch_features(mscn1[y : y + patch_size, x : x + patch_size])
            f2 = _patch_features(mscn2[y // 2 : y // 2 + half, x // 2 : x // 2 + half])
            rows.append(np.concatenate([f1, f2]))
            sharp[iy * nx + ix] = sigma1[y : y + patch_size, x : x + patch_size].mean()
    feats = np.vstack(rows)
    if select_sharp:
        feats = feats[sharp > SHARPNESS_FRACTION * sharp.max()]
    return feats


def _pooled_features(img: np.ndarray, patch_size: int, select_sharp: bool) -> np.ndarray:
    """Features pooled over the image and its horizontal mirror (flip symmetry)."""
    gray = _to_gray255(img)
    a = _image_patch_features(gray, patch_size, select_sharp)
    b = _image_patch_features(gray[:, ::-1], patch_size, select_sharp)
    return np.vstack([a, b])


def niqe(img: np.ndarray, model: NiqeModel) -> float:
    """Score an image against a pristine model; lower means more natural."""
    img = check_image(img)
    feats = _pooled_features(img, model.patch_size, select_sharp=False)
    if feats.shape[0] < 2:
        raise ValueError(
            f"image too small: need at least 2 patches of {model.patch_size} px"
        )
    mu = feats.mean(axis=0)
    cov = np.cov(feats.T)
    d = model.mean - mu
    pooled = (model.cov + cov) / 2.0
    dist2 = d @ np.linalg.pinv(pooled) @ d
    return float(np.sqrt(max(dist2, 0.0)))


def fit_niqe_model(pristine_corpus, min_images: int = 50) -> NiqeModel:
    """Fit the pristine feature Gaussian from a corpus of clean images.

    Deterministic given corpus order. Covariance gets a small ridge so it is
    positive semi-definite even for borderline corpora.
    """
    imgs = list(pristine_corpus)
    if len(imgs) < min_images:
        raise ValueError(f"pristine corpus too small: {len(imgs)} < {min_images}")
    digest = hashlib.sha256()
    all_feats = []
    for img in imgs:
        img = check_image(img)
        digest.update(np.ascontiguousarray(img).tobytes())
        feats = _pooled_features(img, PATCH_SIZE, select_sharp=True)
        if feats.shape[0]:
            all_feats.append(feats)
    feats = np.vstack(all_feats)
    mean = feats.mean(axis=0)
    cov = np.cov(feats.T) + RIDGE * np.eye(FEATURE_DIM)
    return NiqeModel(mean=mean, cov=cov, corpus_hash=digest.hexdigest())
