"""Light Up Module: decomposes a low-light image into a reflectance map and
an illumination map, trained without references.

The network takes the RGB image concatenated with its bright channel
(4 input channels), runs a small encoder/decoder with two skip
concatenations, and projects reflectance (3ch) and illumination (1ch)
through sigmoid heads, so both maps live in [0, 1].

Losses (all element means, inputs in [0, 1]):
  reconstruction   |R o L - I|_1 with L broadcast over RGB
  feature prior    MSE between backbone features of R and of the
                   histogram-equalized input (conv4_1 tap)
  smoothness       |grad L| / max(|grad I|, eps), penalizing illumination
                   edges where the input is flat
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .torchops import bright_channel_t, forward_gradients, hist_equalize_t, ssim_t
from .validation import check_image

__all__ = [
    "DecompositionResult",
    "LumLossWeights",
    "LumNet",
    "decompose",
    "loss_hep",
    "loss_recon",
    "loss_illum_smooth",
    "loss_lum_total",
    "ablation_prior_loss",
    "PRIOR_KINDS",
]

HEP_LAYER = "conv4_1"


@dataclass
class DecompositionResult:
    """Reflectance (H, W, 3) and illumination (H, W, 1) maps in [0, 1]."""

    reflectance: np.ndarray
    illumination: np.ndarray


@dataclass
class LumLossWeights:
    lambda_hep: float = 0.1
    lambda_is: float = 0.1
    epsilon: float = 0.01

    def __post_init__(self):
        if min(self.lambda_hep, self.lambda_is, self.epsilon) <= 0:
            raise ValueError("loss weights and epsilon must be positive")


class LumNet(nn.Module):
    """Decomposition network; H and W must be divisible by 2."""

    def __init__(self, channels: int = 64):
        super().__init__()
        c = channels
        self.head = nn.Conv2d(4, c, kernel_size=9, padding=4)
        self.conv1 = nn.Conv2d(c, c, 3, padding=1)
        self.conv2 = nn.Conv2d(c, c, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(c, c, 3, padding=1)
        self.deconv = nn.ConvTranspose2d(c, c, 3, stride=2, padding=1, output_padding=1)
        self.fuse = nn.Conv2d(2 * c, c, 3, padding=1)
        self.out_r = nn.Conv2d(2 * c, 3, 3, padding=1)
        self.out_l = nn.Conv2d(2 * c, 1, 3, padding=1)
        self.channels = c

    def forward(self, img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """img: [N, 3, H, W] in [0, 1] -> (reflectance, illumination)."""
        if img.shape[-1] % 2 or img.shape[-2] % 2:
            raise ValueError(f"H and W must be divisible by 2, got {tuple(img.shape[-2:])}")
        x = torch.cat([img, bright_channel_t(img)], dim=1)
        f0 = F.relu(self.head(x))
        c1 = F.relu(self.conv1(f0))
        c2 = F.relu(self.conv2(c1))
        c3 = F.relu(self.conv3(c2))
        up = F.relu(self.deconv(c3))
        fused = F.relu(self.fuse(torch.cat([up, c1], dim=1)))
        feat = torch.cat([fused, f0], dim=1)
        return torch.sigmoid(self.out_r(feat)), torch.sigmoid(self.out_l(feat))


def init_lum(channels: int = 64, seed: int = 0) -> LumNet:
    """Fan-in-scaled random init with a pinned seed."""
    net = LumNet(channels)
    gen = torch.Generator().manual_seed(seed)
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            m.weight.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
            m.bias.data.zero_()
    return net


def _to_batch(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()


def decompose(net: LumNet, img: np.ndarray) -> DecompositionResult:
    """Run the network on one [H, W, 3] image (inference mode).

    Odd-sized images are reflect-padded to even and the outputs cropped back.
    """
    img = check_image(img, channels=(3,))
    h, w, _ = img.shape
    pad_h, pad_w = h % 2, w % 2
    t = _to_batch(img)
    if pad_h or pad_w:
        t = F.pad(t, (0, pad_w, 0, pad_h), mode="reflect")
    net.eval()
    with torch.no_grad():
        r, l = net(t)
    r = r[0, :, :h, :w].numpy().transpose(1, 2, 0)
    l = l[0, :, :h, :w].numpy().transpose(1, 2, 0)
    return DecompositionResult(reflectance=r, illumination=l)


# --- losses (torch tensors [N, C, H, W]) -----------------------------------

def loss_recon(reflectance: torch.Tensor, illumination: torch.Tensor, img: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between R o L and the input."""
    return (reflectance * illumination - img).abs().mean()


def loss_hep(reflectance: torch.Tensor, img: torch.Tensor, backbone, reference: str = "equalized") -> torch.Tensor:
    """Feature-prior loss: MSE between reflectance features and reference
    features at conv4_1.

    reference="equalized" (default) compares against the histogram-equalized
    input; "input" compares against the raw input.
    """
    if reference == "equalized":
        ref = hist_equalize_t(img)
    elif reference == "input":
        ref = img
    else:
        raise ValueError(f"reference must be 'equalized' or 'input', got {reference!r}")
    f_r = backbone.features(reflectance, HEP_LAYER)
    with torch.no_grad():
        f_ref = backbone.features(ref, HEP_LAYER)
    return ((f_r - f_ref) ** 2).mean()


def loss_illum_smooth(illumination: torch.Tensor, img: torch.Tensor, epsilon: float = 0.01) -> torch.Tensor:
    """Structure-aware total variation on the illumination map.

    The penalty is |grad L| divided by the input's per-direction gradient
    magnitude (channel mean), floored at epsilon, so edges of L are cheap
    where the input has edges and expensive where it is flat.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    gl_h, gl_v = forward_gradients(illumination)
    with torch.no_grad():
        gi_h, gi_v = forward_gradients(img)
        den_h = gi_h.abs().mean(dim=1, keepdim=True).clamp_min(epsilon)
        den_v = gi_v.abs().mean(dim=1, keepdim=True).clamp_min(epsilon)
    term_h = gl_h.abs() / den_h
    term_v = gl_v.abs() / den_v
    return torch.cat([term_h, term_v], dim=1).mean()


def loss_lum_total(
    reflectance: torch.Tensor,
    illumination: torch.Tensor,
    img: torch.Tensor,
    backbone,
    weights: LumLossWeights | None = None,
    hep_reference: str = "equalized",
) -> tuple[torch.Tensor, dict]:
    """recon + lambda_hep * hep + lambda_is * smooth, plus the parts."""
    w = weights or LumLossWeights()
    recon = loss_recon(reflectance, illumination, img)
    hep = loss_hep(reflectance, img, backbone, reference=hep_reference)
    smooth = loss_illum_smooth(illumination, img, epsilon=w.epsilon)
    total = recon + w.lambda_hep * hep + w.lambda_is * smooth
    parts = {"recon": recon, "hep": hep, "is": smooth}
    return total, parts


PRIOR_KINDS = ("L1", "MSE", "SSIM", "MAXENT", "HEP")


def ablation_prior_loss(kind: str, reflectance: torch.Tensor, img: torch.Tensor, backbone=None) -> torch.Tensor:
    """Alternative reflectance priors used by the prior ablation study.

    L1 / MSE / SSIM compare the reflectance against the equalized input;
    MAXENT compares the reflectance's max channel against the equalized max
    channel of the input; HEP is the featureprior (needs a backbone).
    """
    kind = kind.upper()
    if kind == "HEP":
        if backbone is None:
            raise ValueError("HEP prior needs a backbone")
        return loss_hep(reflectance, img, backbone)
    ref = hist_equalize_t(img)
    if kind == "L1":
        return (reflectance - ref).abs().mean()
    if kind == "MSE":
        return ((reflectance - ref) ** 2).mean()
    if kind == "SSIM":
        return 1.0 - ssim_t(reflectance, ref)
    if kind == "MAXENT":
        r_max = bright_channel_t(reflectance)
        ref_max = hist_equalize_t(bright_channel_t(img))
        return (r_max - ref_max).abs().mean()
    raise ValueError(f"unknown prior kind {kind!r}; choose from {PRIOR_KINDS}")
