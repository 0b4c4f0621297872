"""Unsupervised low-light image enhancement toolkit.

Two trainable stages: a decomposition network brightens images by splitting
them into reflectance and illumination maps (guided by a feature prior on
histogram-equalized inputs), and an unpaired adversarial disentanglement
network removes the noise carried by the reflectance maps.
"""

from .backbone import (
    FeatureMap,
    SimilarityReport,
    Vgg19Backbone,
    cosine_similarity,
    create_backbone,
    hep_validate,
)
from .estimators import LightUpEnhancer, NiqeScorer, NoiseDisentangler
from .imaging import (
    BlurBank,
    GradientPair,
    bright_channel,
    gaussian_blur,
    hist_equalize,
    load_image,
    save_image,
    spatial_gradient,
)
from .lum import DecompositionResult, LumNet, decompose
from .metrics import psnr, ssim
from .ndm import NdmNetworks, denoise
from .niqe import NiqeModel, fit_niqe_model, niqe

__version__ = "0.1.0"

__all__ = [
    "BlurBank",
    "DecompositionResult",
    "FeatureMap",
    "GradientPair",
    "LightUpEnhancer",
    "LumNet",
    "NdmNetworks",
    "NiqeModel",
    "NiqeScorer",
    "NoiseDisentangler",
    "SimilarityReport",
    "Vgg19Backbone",
    "bright_channel",
    "cosine_similarity",
    "create_backbone",
    "decompose",
    "denoise",
    "fit_niqe_model",
    "gaussian_blur",
    "hep_validate",
    "hist_equalize",
    "load_image",
    "niqe",
    "psnr",
    "save_image",
    "spatial_gradient",
    "ssim",
]
