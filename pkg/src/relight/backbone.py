"""Fixed pretrained 19-layer convolutional backbone with named feature taps.

The network is the classic five-block 3x3-conv classification stack
(configuration E), ImageNet-trained. Layers are addressed as
"conv{block}_{index}" and tapped after the ReLU. Weights are never updated
by anything in this package.

Weight resolution order for ``weights="auto"``:
  1. explicit file path passed by the caller,
  2. $RELIGHT_VGG19_WEIGHTS (a .pth file),
  3. $RELIGHT_BACKBONE_CACHE/vgg19.pth,
  4. download of the standard torchvision checkpoint (needs network).
``weights="random"`` gives a seeded He-initialized network for tests and
experiments that do not depend on ImageNet features.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .imaging import hist_equalize
from .validation import check_image

__all__ = [
    "FeatureMap",
    "SimilarityReport",
    "Vgg19Backbone",
    "create_backbone",
    "cosine_similarity",
    "hep_validate",
    "parameter_checksum",
    "MissingWeightsError",
]

WEIGHTS_ENV = "RELIGHT_VGG19_WEIGHTS"
CACHE_ENV = "RELIGHT_BACKBONE_CACHE"
TORCHVISION_VGG19_URL = "https://download.pytorch.org/models/vgg19-dcbb9e9d.pth"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# (name, in_channels, out_channels); "pool" marks a 2x2 max-pool boundary.
_VGG19_PLAN = [
    ("conv1_1", 3, 64), ("conv1_2", 64, 64), "pool",
    ("conv2_1", 64, 128), ("conv2_2", 128, 128), "pool",
    ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256), ("conv3_4", 256, 256), "pool",
    ("conv4_1", 256, 512), ("conv4_2", 512, 512), ("conv4_3", 512, 512), ("conv4_4", 512, 512), "pool",
    ("conv5_1", 512, 512), ("conv5_2", 512, 512), ("conv5_3", 512, 512), ("conv5_4", 512, 512), "pool",
]


class MissingWeightsError(RuntimeError):
    """No pretrained weight source could be resolved."""


@dataclass
class FeatureMap:
    """Activations tapped from one backbone layer, as [Hf, Wf, Cf]."""

    data: np.ndarray
    layer_name: str


@dataclass
class SimilarityReport:
    """Per-image cosine similarities plus summary statistics."""

    per_image_cosine: list[float] = field(default_factory=list)

    def fraction_above(self, threshold: float) -> float:
        if not self.per_image_cosine:
            return 0.0
        return float(np.mean(np.asarray(self.per_image_cosine) > threshold))

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_image_cosine))


class Vgg19Backbone(nn.Module):
    """Feature extractor over the 19-layer stack with post-ReLU taps."""

    LAYERS = tuple(name for name, *_ in (p for p in _VGG19_PLAN if p != "pool"))

    def __init__(self, weights="auto", weights_path=None, seed: int = 0, device="cpu"):
        super().__init__()
        convs = {}
        for item in _VGG19_PLAN:
            if item == "pool":
                continue
            name, cin, cout = item
            convs[name] = nn.Conv2d(cin, cout, kernel_size=3, padding=1)
        self.convs = nn.ModuleDict(convs)
        self.pool = nn.MaxPool2d(2, 2)
        self._plan = _VGG19_PLAN

        if weights == "random":
            self._init_random(seed)
        else:
            state = _resolve_weights(weights, weights_path)
            self.load_state_dict(_adapt_state_dict(state, list(convs)))

        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)

        self.to(device)
        self.eval()
        self.requires_grad_(False)

    def _init_random(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for conv in self.convs.values():
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            conv.weight.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
            conv.bias.data.zero_()

    def check_layer(self, layer: str) -> None:
        if layer not in self.convs:
            raise ValueError(f"unknown layer {layer!r}; known: {', '.join(self.LAYERS)}")

    def features(self, x: torch.Tensor, layer: str) -> torch.Tensor:
        """Run [N, C, H, W] unit-range input up to `layer` (post-ReLU tap).

        Differentiable with respect to the input; parameters stay frozen.
        """
        self.check_layer(layer)
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        x = (x - self.input_mean.to(x.dtype)) / self.input_std.to(x.dtype)
        for item in self._plan:
            if item == "pool":
                x = self.pool(x)
                continue
            name = item[0]
            conv = self.convs[name]
            # Functional application with casted copies keeps the stored
            # parameters untouched when callers run in float64.
            w = conv.weight.to(x.dtype)
            b = conv.bias.to(x.dtype)
            x = torch.relu(nn.functional.conv2d(x, w, b, padding=1))
            if name == layer:
                return x
        raise AssertionError("unreachable")

    def extract_features(self, img: np.ndarray, layer: str) -> FeatureMap:
        """Extract one image's feature map as [Hf, Wf, Cf] (no gradients)."""
        img = check_image(img)
        t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()
        with torch.no_grad():
            f = self.features(t.to(self.input_mean.device), layer)
        return FeatureMap(data=f[0].cpu().numpy().transpose(1, 2, 0), layer_name=layer)


def _resolve_weights(weights, weights_path) -> dict:
    candidates = []
    if weights_path is not None:
        candidates.append(Path(weights_path))
    if weights not in ("auto", "download"):
        raise ValueError(f"weights must be 'auto', 'download', or 'random', got {weights!r}")
    if weights == "auto":
        env_file = os.environ.get(WEIGHTS_ENV)
        if env_file:
            candidates.append(Path(env_file))
        cache_dir = os.environ.get(CACHE_ENV)
        if cache_dir:
            candidates.append(Path(cache_dir) / "vgg19.pth")
    for path in candidates:
        if path.is_file():
            return torch.load(path, map_location="cpu", weights_only=True)
    if weights_path is not None:
        raise MissingWeightsError(f"weight file not found: {weights_path}")
    try:
        return torch.hub.load_state_dict_from_url(TORCHVISION_VGG19_URL, map_location="cpu")
    except Exception as e:
        raise MissingWeightsError(
            "no pretrained weights available: set "
            f"${WEIGHTS_ENV} or ${CACHE_ENV}, pass weights_path, or allow network access"
        ) from e


def _adapt_state_dict(state: dict, conv_names: list[str]) -> dict:
    """Accept either this package's naming or a torchvision-style sequential dict."""
    if any(k.startswith("features.") for k in state):
        seq_idx = sorted(
            {int(k.split(".")[1]) for k in state if k.startswith("features.") and k.endswith(".weight")}
        )
        if len(seq_idx) < len(conv_names):
            raise ValueError("state dict has too few conv layers for the 19-layer stack")
        out = {}
        for name, idx in zip(conv_names, seq_idx):
            out[f"convs.{name}.weight"] = state[f"features.{idx}.weight"]
            out[f"convs.{name}.bias"] = state[f"features.{idx}.bias"]
        return out
    return {k: v for k, v in state.items() if k.startswith("convs.")}


BACKBONE_REGISTRY = {"vgg19": Vgg19Backbone}


def create_backbone(name: str = "vgg19", **kwargs):
    try:
        cls = BACKBONE_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown backbone {name!r}; registered: {sorted(BACKBONE_REGISTRY)}")
    return cls(**kwargs)


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameters, for immutability assertions."""
    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.cpu().numpy().tobytes())
    return digest.hexdigest()


def _cosine(va: np.ndarray, vb: np.ndarray) -> float:
    va = va.ravel().astype(np.float64)
    vb = vb.ravel().astype(np.float64)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


def cosine_similarity(a: FeatureMap, b: FeatureMap) -> float:
    """Cosine of the angle between two flattened feature maps; 0 if either is null."""
    if a.layer_name != b.layer_name:
        raise ValueError(f"layer mismatch: {a.layer_name} vs {b.layer_name}")
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _cosine(a.data, b.data)


# How a feature map is collapsed before the similarity comparison. "flat"
# keeps every activation; "channel_mean" pools space away; "gram" compares
# channel co-activation structure.
FEATURE_REDUCTIONS = ("flat", "channel_mean", "gram")


def _reduce_feature(data: np.ndarray, reduction: str) -> np.ndarray:
    if reduction == "flat":
        return data
    if reduction == "channel_mean":
        return data.mean(axis=(0, 1))
    if reduction == "gram":
        flat = data.reshape(-1, data.shape[2]).astype(np.float64)
        return flat.T @ flat / flat.shape[0]
    raise ValueError(f"reduction must be one of {FEATURE_REDUCTIONS}, got {reduction!r}")


def hep_validate(
    paired_dataset,
    backbone: Vgg19Backbone,
    layer: str = "conv4_1",
    plot_path=None,
    reduction: str = "flat",
) -> tuple[SimilarityReport, SimilarityReport]:
    """Compare equalized-input features and raw-input features against
    reference features, per image pair.

    Returns (equalized-vs-reference, raw-vs-reference) reports and optionally
    writes a two-series histogram plot. `reduction` picks the feature
    collapse the cosine is computed on.
    """
    pairs = list(paired_dataset)
    if not pairs:
        raise ValueError("paired dataset is empty")
    eq_report = SimilarityReport()
    raw_report = SimilarityReport()
    for low, gt in pairs:
        f_gt = _reduce_feature(backbone.extract_features(gt, layer).data, reduction)
        f_eq = _reduce_feature(
            backbone.extract_features(hist_equalize(low), layer).data, reduction)
        f_raw = _reduce_feature(backbone.extract_features(low, layer).data, reduction)
        eq_report.per_image_cosine.append(_cosine(f_eq, f_gt))
        raw_report.per_image_cosine.append(_cosine(f_raw, f_gt))
    if plot_path is not None:
        _plot_similarity_histogram(eq_report, raw_report, plot_path)
    return eq_report, raw_report


def _plot_similarity_histogram(eq_report, raw_report, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    bins = np.linspace(-1.0, 1.0, 41)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(raw_report.per_image_cosine, bins=bins, alpha=0.6, color="green",
            label="raw vs reference")
    ax.hist(eq_report.per_image_cosine, bins=bins, alpha=0.6, color="blue",
            label="equalized vs reference")
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("count")
    ax.legend(loc="upper left")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
