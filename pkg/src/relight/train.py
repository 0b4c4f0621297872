"""Training loops, learning-rate schedules, checkpointing, and resume.

Both stages checkpoint to a torch archive (parameters, optimizer moments,
RNG states, step counters) plus a JSON sidecar carrying the architecture
hash, loss weights, seed, and schedule position. With a fixed seed and one
loader worker the loops are bitwise reproducible, and resuming from a
checkpoint continues the identical trajectory.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import lum as lum_mod
from . import ndm as ndm_mod
from .config import (
    LumTrainConfig,
    NdmTrainConfig,
    lum_learning_rate,
    ndm_learning_rate,
)
from .data import BatchFeed, ImageSet, batch_to_tensor, sample_patches
from .imaging import save_image
from .lum import LumNet, decompose, init_lum
from .ndm import NdmNetworks

__all__ = [
    "TrainState",
    "TrainingDivergedError",
    "ArchitectureMismatchError",
    "arch_hash",
    "save_checkpoint",
    "resume",
    "load_lum",
    "load_ndm",
    "train_lum",
    "train_ndm",
    "prepare_ndm_noisy_domain",
]

DIVERGENCE_FACTOR = 10.0
COLLAPSE_THRESHOLD = 1e-3
COLLAPSE_STEPS = 500


class TrainingDivergedError(RuntimeError):
    """Total loss exceeded the divergence guard."""


class ArchitectureMismatchError(RuntimeError):
    """Checkpoint sidecar hash does not match the current configuration."""


def arch_hash(spec: dict) -> str:
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    stage: str
    models: dict
    optimizers: dict
    rng_numpy: dict
    rng_torch: torch.Tensor
    step: int
    epoch: int
    sidecar: dict


def save_checkpoint(
    path,
    *,
    stage: str,
    models: dict,
    optimizers: dict,
    rng_numpy: dict,
    rng_torch: torch.Tensor,
    step: int,
    epoch: int,
    config,
    loss_weights: dict,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "stage": stage,
            "models": {k: v.state_dict() for k, v in models.items()},
            "optimizers": {k: v.state_dict() for k, v in optimizers.items()},
            "rng_numpy": rng_numpy,
            "rng_torch": rng_torch,
            "step": step,
            "epoch": epoch,
        },
        path,
    )
    sidecar = {
        "arch_hash": arch_hash(config.arch_spec()),
        "stage": stage,
        "loss_weights": loss_weights,
        "seed": config.seed,
        "epoch": epoch,
        "schedule_step": step,
        "config": asdict(config),
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(sidecar, f, indent=2)
    return path


def _read_sidecar(path: Path) -> dict:
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.is_file():
        raise FileNotFoundError(f"missing checkpoint sidecar {sidecar_path}")
    with open(sidecar_path) as f:
        return json.load(f)


def resume(checkpoint_path, expected_arch: dict | None = None) -> TrainState:
    """Load a checkpoint for continuation; rejects architecture mismatches."""
    path = Path(checkpoint_path)
    sidecar = _read_sidecar(path)
    if expected_arch is not None and arch_hash(expected_arch) != sidecar["arch_hash"]:
        raise ArchitectureMismatchError(
            f"checkpoint was written for a different architecture "
            f"({sidecar['arch_hash'][:12]} != {arch_hash(expected_arch)[:12]})"
        )
    blob = torch.load(path, map_location="cpu", weights_only=False)
    return TrainState(
        stage=blob["stage"],
        models=blob["models"],
        optimizers=blob["optimizers"],
        rng_numpy=blob["rng_numpy"],
        rng_torch=blob["rng_torch"],
        step=blob["step"],
        epoch=blob["epoch"],
        sidecar=sidecar,
    )


def load_lum(checkpoint_path) -> tuple[LumNet, dict]:
    """Instantiate a decomposition network from a checkpoint."""
    state = resume(checkpoint_path)
    if state.stage != "lum":
        raise ValueError(f"not a light-up checkpoint: stage={state.stage!r}")
    net = LumNet(channels=state.sidecar["config"]["channels"])
    net.load_state_dict(state.models["lum"])
    net.eval()
    return net, state.sidecar


def load_ndm(checkpoint_path) -> tuple[NdmNetworks, dict]:
    """Instantiate the disentanglement networks from a checkpoint."""
    state = resume(checkpoint_path)
    if state.stage != "ndm":
        raise ValueError(f"not a disentanglement checkpoint: stage={state.stage!r}")
    cfg = state.sidecar["config"]
    nets = NdmNetworks.create(base=cfg["base_channels"], noise_dim=cfg["noise_dim"])
    for name, module in _ndm_modules(nets).items():
        module.load_state_dict(state.models[name])
    nets.eval()
    return nets, state.sidecar


def _ndm_modules(nets: NdmNetworks) -> dict:
    return {
        "content_encoder": nets.content_encoder,
        "noise_encoder": nets.noise_encoder,
        "gen_noisy": nets.gen_noisy,
        "gen_clean": nets.gen_clean,
        "disc_noisy": nets.disc_noisy,
        "disc_clean": nets.disc_clean,
    }


def _check_patch_fits(images: ImageSet, patch: int) -> None:
    side = images.min_side()
    if patch > side:
        raise ValueError(f"patch size {patch} exceeds smallest training image side {side}")


def train_lum(
    config: LumTrainConfig,
    train_images: ImageSet,
    backbone,
    out_dir,
    resume_from=None,
) -> Path:
    """Optimize the decomposition network on low-light images only.

    Writes `lum.ckpt` (+ sidecar) and `lum_losses.csv` (step, epoch, lr, and
    each loss component) under out_dir. Aborts if the total loss exceeds
    10x its initial value.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_patch_fits(train_images, config.patch_size)

    net = init_lum(config.channels, seed=config.seed)
    opt = torch.optim.Adam(
        net.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    feed = BatchFeed(
        lambda r: sample_patches(train_images, config.patch_size, config.batch_size,
                                 r, augment=config.augment),
        seed=config.seed, workers=config.workers,
    )
    start_epoch = 0
    step = 0
    if resume_from is not None:
        state = resume(resume_from, expected_arch=config.arch_spec())
        net.load_state_dict(state.models["lum"])
        opt.load_state_dict(state.optimizers["lum"])
        if config.workers == 1 and "bit_generator" in state.rng_numpy:
            feed.set_rng_state(state.rng_numpy)
        start_epoch, step = state.epoch, state.step

    weights = config.loss_weights()
    steps_per_epoch = config.steps_per_epoch or max(1, len(train_images) // config.batch_size)
    ckpt_path = out_dir / "lum.ckpt"
    csv_path = out_dir / "lum_losses.csv"
    mode = "a" if resume_from is not None and csv_path.exists() else "w"
    initial_total = None

    def sampler_state():
        return feed.rng_state() if config.workers == 1 else {"workers": config.workers}

    net.train()
    try:
        with open(csv_path, mode, newline="") as csv_file:
            writer = csv.writer(csv_file)
            if mode == "w":
                writer.writerow(["step", "epoch", "lr", "total", "recon", "hep", "is"])
            for epoch in range(start_epoch + 1, config.epochs + 1):
                lr = lum_learning_rate(config, epoch)
                for group in opt.param_groups:
                    group["lr"] = lr
                for _ in range(steps_per_epoch):
                    img = batch_to_tensor(feed.next())
                    refl, illum = net(img)
                    total, parts = _lum_objective(refl, illum, img, backbone, config, weights)
                    opt.zero_grad()
                    total.backward()
                    opt.step()
                    step += 1
                    total_v = float(total.detach())
                    writer.writerow(
                        [step, epoch, lr, repr(total_v)]
                        + [repr(float(parts[k].detach())) for k in ("recon", "hep", "is")]
                    )
                    csv_file.flush()
                    if initial_total is None:
                        initial_total = total_v
                    if not math.isfinite(total_v) or total_v > DIVERGENCE_FACTOR * initial_total:
                        raise TrainingDivergedError(
                            f"total loss {total_v:.4g} exceeds {DIVERGENCE_FACTOR}x initial "
                            f"{initial_total:.4g} at step {step}"
                        )
                save_checkpoint(
                    ckpt_path,
                    stage="lum",
                    models={"lum": net},
                    optimizers={"lum": opt},
                    rng_numpy=sampler_state(),
                    rng_torch=torch.empty(0, dtype=torch.uint8),
                    step=step,
                    epoch=epoch,
                    config=config,
                    loss_weights={"lambda_hep": weights.lambda_hep, "lambda_is": weights.lambda_is,
                                  "epsilon": weights.epsilon},
                )
    finally:
        feed.close()
    return ckpt_path


def _lum_objective(refl, illum, img, backbone, config: LumTrainConfig, weights):
    zero = img.new_zeros(())
    recon = lum_mod.loss_recon(refl, illum, img) if config.use_recon else zero
    if config.use_prior:
        prior = lum_mod.ablation_prior_loss(config.prior, refl, img, backbone) \
            if config.prior.upper() != "HEP" \
            else lum_mod.loss_hep(refl, img, backbone, reference=config.hep_reference)
    else:
        prior = zero
    smooth = lum_mod.loss_illum_smooth(illum, img, weights.epsilon) if config.use_is else zero
    total = recon + weights.lambda_hep * prior + weights.lambda_is * smooth
    return total, {"recon": recon, "hep": prior, "is": smooth}


def prepare_ndm_noisy_domain(lum_checkpoint, low_images: ImageSet, cache_dir) -> ImageSet:
    """Precompute reflectance maps of the low-light images to disk and load
    them back as the noisy training domain."""
    net, _ = load_lum(lum_checkpoint)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(low_images.images):
        result = decompose(net, np.clip(img.astype(np.float64), 0.0, 1.0))
        p = cache_dir / f"reflectance_{i:05d}.png"
        save_image(result.reflectance, p)
        paths.append(p)
    return ImageSet.from_paths(paths)


def train_ndm(
    config: NdmTrainConfig,
    noisy_images: ImageSet,
    clean_images: ImageSet,
    backbone,
    out_dir,
    resume_from=None,
) -> Path:
    """Alternating least-squares adversarial optimization of the
    disentanglement networks on unpaired noisy/clean images.

    Writes `ndm.ckpt` (+ sidecar, all six modules) and `ndm_losses.csv`.
    Warns when a discriminator stays collapsed for 500 consecutive steps.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_patch_fits(noisy_images, config.patch_size)
    _check_patch_fits(clean_images, config.patch_size)

    nets = NdmNetworks.create(base=config.base_channels, noise_dim=config.noise_dim,
                              seed=config.seed)
    g_opt = torch.optim.Adam(
        list(nets.generator_parameters()), lr=config.lr,
        betas=(config.beta1, 0.999), weight_decay=config.weight_decay,
    )
    d_opt = torch.optim.Adam(
        list(nets.discriminator_parameters()), lr=config.lr,
        betas=(config.beta1, 0.999), weight_decay=config.weight_decay,
    )
    def make_pair(r):
        noisy_b = sample_patches(noisy_images, config.patch_size, config.batch_size,
                                 r, augment=config.augment)
        clean_b = sample_patches(clean_images, config.patch_size, config.batch_size,
                                 r, augment=config.augment)
        return noisy_b, clean_b

    feed = BatchFeed(make_pair, seed=config.seed, workers=config.workers)
    noise_gen = torch.Generator().manual_seed(config.seed)
    step = 0
    if resume_from is not None:
        state = resume(resume_from, expected_arch=config.arch_spec())
        for name, module in _ndm_modules(nets).items():
            module.load_state_dict(state.models[name])
        g_opt.load_state_dict(state.optimizers["generator"])
        d_opt.load_state_dict(state.optimizers["discriminator"])
        if config.workers == 1 and "bit_generator" in state.rng_numpy:
            feed.set_rng_state(state.rng_numpy)
        noise_gen.set_state(state.rng_torch)
        step = state.step

    weights = config.loss_weights()
    disabled = frozenset(config.disabled_losses)
    ckpt_path = out_dir / "ndm.ckpt"
    csv_path = out_dir / "ndm_losses.csv"
    mode = "a" if resume_from is not None and csv_path.exists() else "w"
    initial_total = None
    collapse_run = 0

    def checkpoint(epoch_like: int) -> Path:
        return save_checkpoint(
            ckpt_path,
            stage="ndm",
            models=_ndm_modules(nets),
            optimizers={"generator": g_opt, "discriminator": d_opt},
            rng_numpy=feed.rng_state() if config.workers == 1 else {"workers": config.workers},
            rng_torch=noise_gen.get_state(),
            step=step,
            epoch=epoch_like,
            config=config,
            loss_weights={k: getattr(weights, k) for k in
                          ("lambda_kl", "lambda_per", "lambda_col",
                           "lambda_bc", "lambda_cc", "lambda_rec")},
        )

    nets.train()
    part_names = ("adv", "kl", "cc", "col", "per", "bc", "rec")
    try:
        with open(csv_path, mode, newline="") as csv_file:
            writer = csv.writer(csv_file)
            if mode == "w":
                writer.writerow(["step", "lr", "d_loss", "total"] + list(part_names))
            while step < config.iterations:
                lr = ndm_learning_rate(config, step)
                for opt in (g_opt, d_opt):
                    for group in opt.param_groups:
                        group["lr"] = lr

                noisy_b, clean_b = feed.next()
                noisy = batch_to_tensor(noisy_b)
                clean = batch_to_tensor(clean_b)

                out = ndm_mod.ndm_forward(nets, noisy, clean, generator=noise_gen,
                                          noise_source=config.noise_source)

                # Generator step; discriminators are frozen so their grads stay clean.
                for p in nets.discriminator_parameters():
                    p.requires_grad_(False)
                g_total, parts = ndm_mod.generator_objective(
                    nets, out, noisy, clean, backbone, weights, disabled)
                g_opt.zero_grad()
                g_total.backward()
                g_opt.step()
                for p in nets.discriminator_parameters():
                    p.requires_grad_(True)

                d_value = 0.0
                if "adv" not in disabled:
                    for _ in range(config.disc_steps):
                        d_loss = ndm_mod.discriminator_objective(nets, out, noisy, clean)
                        d_opt.zero_grad()
                        d_loss.backward()
                        d_opt.step()
                        d_value = float(d_loss.detach())

                step += 1
                total_v = float(g_total.detach())
                writer.writerow([step, lr, repr(d_value), repr(total_v)]
                                + [repr(float(parts[k].detach())) for k in part_names])
                csv_file.flush()

                if initial_total is None:
                    initial_total = total_v
                if not math.isfinite(total_v) or total_v > DIVERGENCE_FACTOR * initial_total:
                    raise TrainingDivergedError(
                        f"generator loss {total_v:.4g} exceeds {DIVERGENCE_FACTOR}x initial "
                        f"{initial_total:.4g} at step {step}"
                    )
                if "adv" not in disabled and d_value < COLLAPSE_THRESHOLD:
                    collapse_run += 1
                    if collapse_run == COLLAPSE_STEPS:
                        warnings.warn(
                            f"discriminator loss below {COLLAPSE_THRESHOLD} for "
                            f"{COLLAPSE_STEPS} consecutive steps (collapse?)",
                            RuntimeWarning,
                        )
                        collapse_run = 0
                else:
                    collapse_run = 0

                if step % 500 == 0:
                    checkpoint(step)
        return checkpoint(step)
    finally:
        feed.close()
