"""Noise Disentanglement Module: unpaired translation between a noisy image
domain and a clean image domain.

One content encoder serves both domains (a single parameter set), a
variational noise encoder maps noisy images to an 8-dim latent regularized
toward the standard normal, two generators map codes back to images, and two
patch-level least-squares discriminators judge realism. Denoising at test
time is the deterministic path clean_generator(content_encoder(x)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .imaging import BlurBank
from .torchops import gaussian_blur_t
from .validation import check_image

__all__ = [
    "NoiseCode",
    "NdmLossWeights",
    "NdmNetworks",
    "denoise",
    "ndm_forward",
    "loss_kl",
    "loss_lsgan",
    "loss_lsgan_generator",
    "loss_cycle",
    "loss_self_recon",
    "loss_perceptual",
    "loss_color_constancy",
    "loss_background_consistency",
    "loss_ndm_total",
]

PERCEPTUAL_LAYER = "conv3_2"
NOISE_DIM = 8
LOGVAR_RANGE = 10.0
REAL_LABEL = 1.0
FAKE_LABEL = 0.0

# Which generated image each loss term attaches to (gen_* are the cross-
# domain translations, recon_* the self-reconstructions, cycle_* the
# round trips produced by ndm_forward).
LOSS_ATTACHMENTS = {
    "adv": ("gen_clean vs clean domain", "gen_noisy vs noisy domain"),
    "kl": ("noise code of the real noisy batch",),
    "cc": ("cycle_noisy vs noisy", "cycle_clean vs clean"),
    "col": ("gen_clean",),
    "per": ("gen_clean vs noisy input",),
    "bc": ("gen_clean vs noisy input",),
    "rec": ("recon_noisy vs noisy", "recon_clean vs clean"),
}


@dataclass
class NoiseCode:
    """Variational noise latent: per-dimension mean and log-variance."""

    mu: torch.Tensor
    logvar: torch.Tensor

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(0.5 * self.logvar)

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eta = torch.randn(self.mu.shape, generator=generator, dtype=self.mu.dtype,
                          device=self.mu.device)
        return self.mu + self.sigma * eta


@dataclass
class NdmLossWeights:
    lambda_kl: float = 0.01
    lambda_per: float = 0.1
    lambda_col: float = 0.5
    lambda_bc: float = 5.0
    lambda_cc: float = 10.0
    lambda_rec: float = 10.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")


def _norm(ch: int) -> nn.Module:
    return nn.InstanceNorm2d(ch)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1), _norm(ch), nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, padding=1), _norm(ch),
        )

    def forward(self, x):
        return x + self.block(x)


class ContentEncoder(nn.Module):
    """Two stride-2 convs then four residual blocks; output at 1/4 resolution."""

    def __init__(self, base: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, base, 3, stride=2, padding=1), _norm(base), nn.ReLU(inplace=True),
            nn.Conv2d(base, 2 * base, 3, stride=2, padding=1), _norm(2 * base), nn.ReLU(inplace=True),
            *[ResidualBlock(2 * base) for _ in range(4)],
        )
        self.out_channels = 2 * base

    def forward(self, x):
        return self.net(x)


class NoiseEncoder(nn.Module):
    """Four stride-2 convs, global average pool, two linear heads (mu, logvar)."""

    def __init__(self, base: int = 64, dim: int = NOISE_DIM):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, base, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(base, 2 * base, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(2 * base, 4 * base, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(4 * base, 4 * base, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        self.fc_mu = nn.Linear(4 * base, dim)
        self.fc_logvar = nn.Linear(4 * base, dim)
        self.dim = dim

    def forward(self, x) -> NoiseCode:
        h = self.net(x).mean(dim=(2, 3))
        mu = self.fc_mu(h)
        logvar = self.fc_logvar(h).clamp(-LOGVAR_RANGE, LOGVAR_RANGE)
        return NoiseCode(mu=mu, logvar=logvar)


class _GeneratorCore(nn.Module):
    def __init__(self, in_channels: int, base: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, 2 * base, 3, padding=1), _norm(2 * base), nn.ReLU(inplace=True),
            *[ResidualBlock(2 * base) for _ in range(4)],
            nn.ConvTranspose2d(2 * base, base, 3, stride=2, padding=1, output_padding=1),
            _norm(base), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(base, base // 2, 3, stride=2, padding=1, output_padding=1),
            _norm(base // 2), nn.ReLU(inplace=True),
            nn.Conv2d(base // 2, 3, 3, padding=1),
        )

    def forward(self, x):
        return torch.sigmoid(self.net(x))


class CleanGenerator(nn.Module):
    """Content code -> clean image."""

    def __init__(self, base: int = 64):
        super().__init__()
        self.core = _GeneratorCore(2 * base, base)

    def forward(self, content):
        return self.core(content)


class NoisyGenerator(nn.Module):
    """Content code + spatially broadcast noise vector -> noisy image."""

    def __init__(self, base: int = 64, noise_dim: int = NOISE_DIM):
        super().__init__()
        self.core = _GeneratorCore(2 * base + noise_dim, base)
        self.noise_dim = noise_dim

    def forward(self, content, noise):
        n, _, h, w = content.shape
        tiled = noise.view(n, self.noise_dim, 1, 1).expand(n, self.noise_dim, h, w)
        return self.core(torch.cat([content, tiled], dim=1))


class Discriminator(nn.Module):
    """Four stride-2 convs emitting a patch-level score map."""

    def __init__(self, base: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, base, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base, 2 * base, 4, stride=2, padding=1), _norm(2 * base), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * base, 4 * base, 4, stride=2, padding=1), _norm(4 * base), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * base, 8 * base, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(8 * base, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


@dataclass
class NdmNetworks:
    """All five trainable parts. Both domains' content encoders resolve to
    the single `content_encoder` object (parameter sharing by identity)."""

    content_encoder: ContentEncoder
    noise_encoder: NoiseEncoder
    gen_noisy: NoisyGenerator
    gen_clean: CleanGenerator
    disc_noisy: Discriminator
    disc_clean: Discriminator
    noise_dim: int = NOISE_DIM

    @classmethod
    def create(cls, base: int = 64, noise_dim: int = NOISE_DIM, seed: int = 0) -> "NdmNetworks":
        nets = cls(
            content_encoder=ContentEncoder(base),
            noise_encoder=NoiseEncoder(base, noise_dim),
            gen_noisy=NoisyGenerator(base, noise_dim),
            gen_clean=CleanGenerator(base),
            disc_noisy=Discriminator(base),
            disc_clean=Discriminator(base),
            noise_dim=noise_dim,
        )
        gen = torch.Generator().manual_seed(seed)
        for module in nets.modules():
            for m in module.modules():
                if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    m.weight.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                    if m.bias is not None:
                        m.bias.data.zero_()
                elif isinstance(m, nn.Linear):
                    m.weight.data.normal_(0.0, (2.0 / m.in_features) ** 0.5, generator=gen)
                    m.bias.data.zero_()
        return nets

    def modules(self):
        return [self.content_encoder, self.noise_encoder, self.gen_noisy,
                self.gen_clean, self.disc_noisy, self.disc_clean]

    def generator_parameters(self):
        for m in (self.content_encoder, self.noise_encoder, self.gen_noisy, self.gen_clean):
            yield from m.parameters()

    def discriminator_parameters(self):
        for m in (self.disc_noisy, self.disc_clean):
            yield from m.parameters()

    def train(self):
        for m in self.modules():
            m.train()

    def eval(self):
        for m in self.modules():
            m.eval()


def denoise(nets: NdmNetworks, noisy: np.ndarray) -> np.ndarray:
    """Translate one [H, W, 3] noisy image to the clean domain.

    Deterministic: no noise sampling on this path. Sizes are reflect-padded
    to multiples of 4 and cropped back.
    """
    noisy = check_image(noisy, channels=(3,))
    h, w, _ = noisy.shape
    pad_h = (-h) % 4
    pad_w = (-w) % 4
    t = torch.from_numpy(np.ascontiguousarray(noisy.transpose(2, 0, 1)))[None].float()
    if pad_h or pad_w:
        t = F.pad(t, (0, pad_w, 0, pad_h), mode="reflect")
    nets.eval()
    with torch.no_grad():
        out = nets.gen_clean(nets.content_encoder(t))
    return out[0, :, :h, :w].numpy().transpose(1, 2, 0)


def ndm_forward(
    nets: NdmNetworks,
    noisy: torch.Tensor,
    clean: torch.Tensor,
    generator: torch.Generator | None = None,
    noise_source: str = "prior",
) -> dict:
    """One full translation pass over a (noisy, clean) unpaired batch.

    noise_source picks the latent fed to the noisy generator on the clean
    path: "prior" draws from N(0, 1); "encoder" reuses the code of the
    noisy batch.
    """
    enc = nets.content_encoder
    content_noisy = enc(noisy)
    content_clean = enc(clean)
    code = nets.noise_encoder(noisy)
    z_noisy = code.sample(generator)

    if noise_source == "prior":
        z_clean = torch.randn(
            (clean.shape[0], nets.noise_dim), generator=generator,
            dtype=clean.dtype, device=clean.device,
        )
    elif noise_source == "encoder":
        z_clean = z_noisy
    else:
        raise ValueError(f"noise_source must be 'prior' or 'encoder', got {noise_source!r}")

    gen_clean_img = nets.gen_clean(content_noisy)            # denoised noisy
    gen_noisy_img = nets.gen_noisy(content_clean, z_clean)   # noisified clean
    recon_noisy = nets.gen_noisy(content_noisy, z_noisy)     # self-reconstructions
    recon_clean = nets.gen_clean(content_clean)
    cycle_noisy = nets.gen_noisy(enc(gen_clean_img), z_noisy)  # back-translations
    cycle_clean = nets.gen_clean(enc(gen_noisy_img))

    return {
        "code": code,
        "gen_clean": gen_clean_img,
        "gen_noisy": gen_noisy_img,
        "recon_noisy": recon_noisy,
        "recon_clean": recon_clean,
        "cycle_noisy": cycle_noisy,
        "cycle_clean": cycle_clean,
    }


# --- losses -----------------------------------------------------------------

def loss_kl(code: NoiseCode) -> torch.Tensor:
    """KL divergence of the noise latent from N(0, I): per-sample
    0.5 * sum(-log sigma^2 + mu^2 + sigma^2 - 1), meaned over the batch."""
    per_sample = 0.5 * (-code.logvar + code.mu**2 + torch.exp(code.logvar) - 1.0).sum(dim=1)
    return per_sample.mean()


def loss_lsgan(disc, real_batch: torch.Tensor, fake_batch: torch.Tensor,
               a: float = FAKE_LABEL, b: float = REAL_LABEL) -> torch.Tensor:
    """Least-squares discriminator objective with labels a (fake), b (real)."""
    return 0.5 * ((disc(real_batch) - b) ** 2).mean() + 0.5 * ((disc(fake_batch) - a) ** 2).mean()


def loss_lsgan_generator(disc, fake_batch: torch.Tensor, b: float = REAL_LABEL) -> torch.Tensor:
    """Least-squares generator objective: push fakes toward the real label."""
    return 0.5 * ((disc(fake_batch) - b) ** 2).mean()


def loss_cycle(original: torch.Tensor, back_translated: torch.Tensor) -> torch.Tensor:
    """Mean absolute error of the round trip for one domain."""
    return (original - back_translated).abs().mean()


def loss_self_recon(rec: torch.Tensor, orig: torch.Tensor) -> torch.Tensor:
    return (rec - orig).abs().mean()


def loss_perceptual(gen: torch.Tensor, orig: torch.Tensor, backbone) -> torch.Tensor:
    """MSE between backbone features of generated and original at conv3_2."""
    f_gen = backbone.features(gen, PERCEPTUAL_LAYER)
    with torch.no_grad():
        f_orig = backbone.features(orig, PERCEPTUAL_LAYER)
    return ((f_gen - f_orig) ** 2).mean()


def loss_color_constancy(gen: torch.Tensor) -> torch.Tensor:
    """Gray-world penalty: squared differences of channel means over the
    image, summed across the three channel pairs."""
    if gen.shape[1] != 3:
        raise ValueError(f"color constancy needs 3 channels, got {gen.shape[1]}")
    means = gen.mean(dim=(2, 3))
    r, g, b = means[:, 0], means[:, 1], means[:, 2]
    return ((r - g) ** 2 + (r - b) ** 2 + (g - b) ** 2).mean()


def loss_background_consistency(
    orig: torch.Tensor, gen: torch.Tensor, bank: BlurBank | None = None
) -> torch.Tensor:
    """Multi-scale Gaussian-blur matching between input and output."""
    bank = bank or BlurBank()
    total = orig.new_zeros(())
    for sigma, weight in bank.kernels:
        total = total + weight * (gaussian_blur_t(orig, sigma) - gaussian_blur_t(gen, sigma)).abs().mean()
    return total


def loss_ndm_total(
    adv: torch.Tensor,
    kl: torch.Tensor,
    cc: torch.Tensor,
    col: torch.Tensor,
    per: torch.Tensor,
    bc: torch.Tensor,
    rec: torch.Tensor,
    weights: NdmLossWeights | None = None,
) -> torch.Tensor:
    w = weights or NdmLossWeights()
    return (
        adv
        + w.lambda_kl * kl
        + w.lambda_cc * cc
        + w.lambda_col * col
        + w.lambda_per * per
        + w.lambda_bc * bc
        + w.lambda_rec * rec
    )


def generator_objective(
    nets: NdmNetworks,
    out: dict,
    noisy: torch.Tensor,
    clean: torch.Tensor,
    backbone,
    weights: NdmLossWeights | None = None,
    disabled: frozenset[str] = frozenset(),
) -> tuple[torch.Tensor, dict]:
    """Assemble the generator-side loss for one batch.

    `disabled` names components to leave out (for the loss-removal studies);
    skipped components are reported as zero and not computed.
    """
    w = weights or NdmLossWeights()
    zero = noisy.new_zeros(())

    def enabled(name):
        return name not in disabled

    adv = (
        loss_lsgan_generator(nets.disc_clean, out["gen_clean"])
        + loss_lsgan_generator(nets.disc_noisy, out["gen_noisy"])
        if enabled("adv") else zero
    )
    kl = loss_kl(out["code"]) if enabled("kl") else zero
    cc = (
        loss_cycle(noisy, out["cycle_noisy"]) + loss_cycle(clean, out["cycle_clean"])
        if enabled("cc") else zero
    )
    col = loss_color_constancy(out["gen_clean"]) if enabled("col") else zero
    per = loss_perceptual(out["gen_clean"], noisy, backbone) if enabled("per") else zero
    bc = loss_background_consistency(noisy, out["gen_clean"]) if enabled("bc") else zero
    rec = (
        loss_self_recon(out["recon_noisy"], noisy) + loss_self_recon(out["recon_clean"], clean)
        if enabled("rec") else zero
    )
    total = loss_ndm_total(adv, kl, cc, col, per, bc, rec, w)
    parts = {"adv": adv, "kl": kl, "cc": cc, "col": col, "per": per, "bc": bc, "rec": rec}
    return total, parts


def discriminator_objective(
    nets: NdmNetworks, out: dict, noisy: torch.Tensor, clean: torch.Tensor
) -> torch.Tensor:
    """Both discriminators' least-squares objectives on detached fakes."""
    return loss_lsgan(nets.disc_noisy, noisy, out["gen_noisy"].detach()) + loss_lsgan(
        nets.disc_clean, clean, out["gen_clean"].detach()
    )
