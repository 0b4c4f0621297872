"""Scikit-learn style estimators wrapping the two trainable stages and the
no-reference quality model, so they compose with pipelines and grid tools.

X is always a list of [H, W, 3] float arrays in [0, 1] (sizes may differ).
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backbone import create_backbone
from .config import LumTrainConfig, NdmTrainConfig
from .data import ImageSet
from .lum import decompose
from .ndm import denoise
from .niqe import NiqeModel, fit_niqe_model, niqe
from .train import load_lum, load_ndm, train_lum, train_ndm
from .validation import check_images

__all__ = ["LightUpEnhancer", "NoiseDisentangler", "NiqeScorer"]


def _resolve_backbone(backbone, weights):
    if backbone is not None:
        return backbone
    return create_backbone("vgg19", weights=weights)


class LightUpEnhancer(BaseEstimator, TransformerMixin):
    """Reflectance/illumination decomposition learned from low-light images.

    fit(X) trains the decomposition network on the images themselves (no
    references); transform(X) returns the brightened reflectance maps.
    """

    def __init__(
        self,
        epochs: int = 60,
        batch_size: int = 16,
        patch_size: int = 48,
        lr: float = 1e-4,
        weight_decay: float = 1e-4,
        channels: int = 64,
        seed: int = 0,
        lambda_hep: float = 0.1,
        lambda_is: float = 0.1,
        epsilon: float = 0.01,
        hep_reference: str = "equalized",
        augment: bool = True,
        backbone=None,
        backbone_weights: str = "auto",
        work_dir=None,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.channels = channels
        self.seed = seed
        self.lambda_hep = lambda_hep
        self.lambda_is = lambda_is
        self.epsilon = epsilon
        self.hep_reference = hep_reference
        self.augment = augment
        self.backbone = backbone
        self.backbone_weights = backbone_weights
        self.work_dir = work_dir

    def _config(self) -> LumTrainConfig:
        return LumTrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            patch_size=self.patch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            channels=self.channels,
            seed=self.seed,
            lambda_hep=self.lambda_hep,
            lambda_is=self.lambda_is,
            epsilon=self.epsilon,
            hep_reference=self.hep_reference,
            augment=self.augment,
        )

    def fit(self, X, y=None):
        images = check_images(X, channels=(3,))
        backbone = _resolve_backbone(self.backbone, self.backbone_weights)
        out_dir = Path(self.work_dir) if self.work_dir else Path(tempfile.mkdtemp(prefix="lum_"))
        self.checkpoint_path_ = train_lum(self._config(), ImageSet(images), backbone, out_dir)
        self.net_, _ = load_lum(self.checkpoint_path_)
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "LightUpEnhancer":
        est = cls()
        est.net_, sidecar = load_lum(path)
        est.checkpoint_path_ = Path(path)
        est.set_params(**{k: v for k, v in sidecar["config"].items()
                          if k in est.get_params()})
        return est

    def decompose(self, img: np.ndarray):
        check_is_fitted(self, "net_")
        return decompose(self.net_, img)

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "net_")
        return [self.decompose(img).reflectance for img in check_images(X, channels=(3,))]


class NoiseDisentangler(BaseEstimator, TransformerMixin):
    """Unpaired noisy-to-clean translation via content/noise disentanglement.

    fit(X, y) trains on unpaired domains: X = noisy images, y = clean images
    (lengths may differ). transform(X) denoises.
    """

    def __init__(
        self,
        iterations: int = 10000,
        batch_size: int = 16,
        patch_size: int = 64,
        lr: float = 1e-4,
        beta1: float = 0.9,
        weight_decay: float = 1e-4,
        base_channels: int = 64,
        noise_dim: int = 8,
        seed: int = 0,
        noise_source: str = "prior",
        augment: bool = True,
        backbone=None,
        backbone_weights: str = "auto",
        work_dir=None,
    ):
        self.iterations = iterations
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.lr = lr
        self.beta1 = beta1
        self.weight_decay = weight_decay
        self.base_channels = base_channels
        self.noise_dim = noise_dim
        self.seed = seed
        self.noise_source = noise_source
        self.augment = augment
        self.backbone = backbone
        self.backbone_weights = backbone_weights
        self.work_dir = work_dir

    def _config(self) -> NdmTrainConfig:
        return NdmTrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            patch_size=self.patch_size,
            lr=self.lr,
            beta1=self.beta1,
            weight_decay=self.weight_decay,
            base_channels=self.base_channels,
            noise_dim=self.noise_dim,
            seed=self.seed,
            noise_source=self.noise_source,
            augment=self.augment,
        )

    def fit(self, X, y):
        noisy = check_images(X, channels=(3,), name="noisy images")
        clean = check_images(y, channels=(3,), name="clean images")
        backbone = _resolve_backbone(self.backbone, self.backbone_weights)
        out_dir = Path(self.work_dir) if self.work_dir else Path(tempfile.mkdtemp(prefix="ndm_"))
        self.checkpoint_path_ = train_ndm(
            self._config(), ImageSet(noisy), ImageSet(clean), backbone, out_dir
        )
        self.nets_, _ = load_ndm(self.checkpoint_path_)
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "NoiseDisentangler":
        est = cls()
        est.nets_, sidecar = load_ndm(path)
        est.checkpoint_path_ = Path(path)
        est.set_params(**{k: v for k, v in sidecar["config"].items()
                          if k in est.get_params()})
        return est

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "nets_")
        return [denoise(self.nets_, img) for img in check_images(X, channels=(3,))]


class NiqeScorer(BaseEstimator):
    """No-reference quality scoring; fit on pristine images, score anything.

    Lower scores mean more natural statistics.
    """

    def __init__(self, min_images: int = 50):
        self.min_images = min_images

    def fit(self, X, y=None):
        self.model_ = fit_niqe_model(check_images(X), min_images=self.min_images)
        return self

    @classmethod
    def from_model_file(cls, path) -> "NiqeScorer":
        scorer = cls()
        scorer.model_ = NiqeModel.load(path)
        return scorer

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return np.array([niqe(img, self.model_) for img in check_images(X)])

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        self.model_.save(path)
