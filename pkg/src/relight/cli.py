"""Command-line interface: training, inference, evaluation, prior
validation, and the ablation matrix.

Every command reads the same tree-structured YAML config file; command-line
flags override file values. Outputs are plain files (PNG, CSV, JSON).
"""

from __future__ import annotations

import csv
import json
import os
import time
import warnings
from pathlib import Path

import click
import numpy as np

from .backbone import create_backbone, hep_validate
from .config import load_config_file, make_lum_config, make_ndm_config
from .data import DatasetManifest, ImageSet, PairedImageSet
from .imaging import load_image, save_image
from .lum import PRIOR_KINDS, decompose
from .metrics import psnr, ssim
from .ndm import denoise
from .niqe import NiqeModel, fit_niqe_model, niqe
from .train import (
    load_lum,
    load_ndm,
    prepare_ndm_noisy_domain,
    train_lum,
    train_ndm,
)

NIQE_MODEL_ENV = "RELIGHT_NIQE_MODEL"
_PACKAGED_NIQE = Path(__file__).parent / "models" / "niqe_pristine.npz"

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

# Published scores for denoisers we do not reimplement (reference rows in
# the denoiser study output).
DENOISER_BASELINES = {
    "bm3d": (19.57, 0.776, 6.277),
    "du2020": (18.74, 0.791, 4.539),
}


def _image_paths(target: Path) -> list[Path]:
    if target.is_file():
        return [target]
    if target.is_dir():
        return sorted(p for p in target.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    raise click.ClickException(f"input {target} does not exist")


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise click.ClickException(f"{what} not found: {p}")
    return p


def _backbone_from_flags(weights: str, vgg_weights):
    try:
        return create_backbone("vgg19", weights="auto" if weights == "auto" else weights,
                               weights_path=vgg_weights,
                               **({"seed": 0} if weights == "random" else {}))
    except Exception as e:
        raise click.ClickException(str(e))


def _resolve_niqe_model(path) -> NiqeModel | None:
    candidates = [path, os.environ.get(NIQE_MODEL_ENV), _PACKAGED_NIQE]
    for c in candidates:
        if c and Path(c).is_file():
            return NiqeModel.load(c)
    return None


def _safe_niqe(img: np.ndarray, model: NiqeModel) -> float:
    """NIQE score, NaN for images too small to fill two patches."""
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    try:
        return niqe(img, model)
    except ValueError:
        return float("nan")


backbone_options = [
    click.option("--backbone-weights", default="auto",
                 type=click.Choice(["auto", "download", "random"]),
                 help="Pretrained weight source for the feature backbone."),
    click.option("--vgg-weights", default=None, type=click.Path(),
                 help="Explicit path to a backbone weight file."),
]


def add_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
def main():
    """Low-light image enhancement toolkit."""


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(), help="Image file or directory.")
@click.option("--lum", "lum_ckpt", required=True, type=click.Path(), help="Light-up checkpoint.")
@click.option("--ndm", "ndm_ckpt", default=None, type=click.Path(), help="Denoiser checkpoint.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--skip-ndm", is_flag=True, help="Write the raw reflectance maps (no denoising).")
def enhance(input_path, lum_ckpt, ndm_ckpt, out_dir, skip_ndm):
    """Brighten (and optionally denoise) images; writes PNGs."""
    lum_net, _ = load_lum(_require_file(lum_ckpt, "light-up checkpoint"))
    nets = None
    if not skip_ndm:
        if ndm_ckpt is None:
            raise click.ClickException("--ndm is required unless --skip-ndm is given")
        nets, _ = load_ndm(_require_file(ndm_ckpt, "denoiser checkpoint"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _image_paths(Path(input_path)):
        start = time.perf_counter()
        img = load_image(path)
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        result = decompose(lum_net, img).reflectance
        if nets is not None:
            result = np.clip(denoise(nets, result), 0.0, 1.0)
        save_image(result, out_dir / (path.stem + ".png"))
        click.echo(f"{path.name}: {time.perf_counter() - start:.3f}s")


@main.command("eval")
@click.option("--pred", "pred_dir", required=True, type=click.Path())
@click.option("--gt", "gt_dir", default=None, type=click.Path())
@click.option("--no-reference", is_flag=True, help="Skip PSNR/SSIM; score NIQE only.")
@click.option("--niqe-model", default=None, type=click.Path())
@click.option("--out", "out_csv", default=None, type=click.Path())
def eval_cmd(pred_dir, gt_dir, no_reference, niqe_model, out_csv):
    """Per-image and aggregate quality metrics, written as CSV."""
    preds = _image_paths(Path(pred_dir))
    if not preds:
        raise click.ClickException(f"no images under {pred_dir}")
    model = _resolve_niqe_model(niqe_model)
    if not no_reference and gt_dir is None:
        raise click.ClickException("provide --gt or use --no-reference")
    if no_reference and model is None:
        raise click.ClickException(
            "no pristine model available: pass --niqe-model, set "
            f"${NIQE_MODEL_ENV}, or reinstall with the packaged model")

    gt_by_name = {}
    if not no_reference:
        gt_paths = {p.stem: p for p in _image_paths(Path(gt_dir))}
        missing = [p.name for p in preds if p.stem not in gt_paths]
        if missing:
            raise click.ClickException(f"no ground truth for: {', '.join(missing)}")
        gt_by_name = gt_paths

    header = ["image"] + ([] if no_reference else ["psnr", "ssim"]) + (["niqe"] if model else [])
    rows = []
    for p in preds:
        img = load_image(p)
        row = [p.name]
        if not no_reference:
            gt = load_image(gt_by_name[p.stem])
            row += [f"{psnr(img, gt):.4f}", f"{ssim(img, gt):.4f}"]
        if model:
            row += [f"{_safe_niqe(img, model):.4f}"]
        rows.append(row)

    means = ["mean"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN niqe column
        for j in range(1, len(header)):
            means.append(f"{np.nanmean([float(r[j]) for r in rows]):.4f}")
    out_csv = Path(out_csv) if out_csv else Path(pred_dir) / "metrics.csv"
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
        writer.writerow(means)
    click.echo(", ".join(f"{h}={v}" for h, v in zip(header[1:], means[1:])))
    click.echo(f"wrote {out_csv}")


@main.command("hep-validate")
@click.option("--pairs", "manifest_path", required=True, type=click.Path())
@click.option("--split", default=None, help="Paired split name (default: sole paired split).")
@click.option("--layer", default="conv4_1")
@click.option("--reduction", default="flat",
              type=click.Choice(["flat", "channel_mean", "gram"]),
              help="Feature collapse the cosine is computed on.")
@click.option("--out", "out_base", required=True, type=click.Path(),
              help="Output basename; writes <out>.json and <out>.png.")
@add_options(backbone_options)
def hep_validate_cmd(manifest_path, split, layer, reduction, out_base, backbone_weights, vgg_weights):
    """Compare equalized-input vs raw-input feature similarity to references."""
    manifest = DatasetManifest.load(_require_file(manifest_path, "manifest"))
    if split is None:
        if len(manifest.pairs) != 1:
            raise click.ClickException(
                f"manifest has paired splits {sorted(manifest.pairs)}; pick one with --split")
        split = next(iter(manifest.pairs))
    if split not in manifest.pairs:
        raise click.ClickException(f"split {split!r} is not a paired split")
    paired = PairedImageSet.from_manifest(manifest, split)
    backbone = _backbone_from_flags(backbone_weights, vgg_weights)
    out_base = Path(out_base)
    eq_rep, raw_rep = hep_validate(
        zip(paired.low.images, paired.high.images), backbone, layer=layer,
        plot_path=out_base.with_suffix(".png"), reduction=reduction,
    )
    report = {
        "layer": layer,
        "split": split,
        "reduction": reduction,
        "equalized_vs_reference": eq_rep.per_image_cosine,
        "raw_vs_reference": raw_rep.per_image_cosine,
        "summary": {
            "mean_equalized": eq_rep.mean,
            "mean_raw": raw_rep.mean,
            "fraction_above_0.8_equalized": eq_rep.fraction_above(0.8),
            "fraction_above_0.8_raw": raw_rep.fraction_above(0.8),
        },
    }
    out_base.parent.mkdir(parents=True, exist_ok=True)
    with open(out_base.with_suffix(".json"), "w") as f:
        json.dump(report, f, indent=2)
    click.echo(
        f"mean cosine: equalized {eq_rep.mean:.4f} vs raw {raw_rep.mean:.4f}; "
        f"wrote {out_base.with_suffix('.json')} and {out_base.with_suffix('.png')}"
    )


@main.command("train-lum")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--split", default="lol-train")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--epochs", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--resume", "resume_from", default=None, type=click.Path())
@add_options(backbone_options)
def train_lum_cmd(manifest_path, split, config_path, out_dir, epochs, seed,
                  resume_from, backbone_weights, vgg_weights):
    """Train the decomposition network on a manifest's low-light images."""
    file_data = load_config_file(config_path) if config_path else {}
    cfg = make_lum_config(file_data, epochs=epochs, seed=seed)
    manifest = DatasetManifest.load(_require_file(manifest_path, "manifest"))
    lows = ImageSet.from_paths([low for low, _ in manifest.pairs[split]])
    backbone = _backbone_from_flags(backbone_weights, vgg_weights)
    ckpt = train_lum(cfg, lows, backbone, out_dir, resume_from=resume_from)
    click.echo(f"wrote {ckpt}")


@main.command("train-ndm")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--split", default="unpaired")
@click.option("--lum", "lum_ckpt", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--iterations", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--resume", "resume_from", default=None, type=click.Path())
@add_options(backbone_options)
def train_ndm_cmd(manifest_path, split, lum_ckpt, config_path, out_dir, iterations,
                  seed, resume_from, backbone_weights, vgg_weights):
    """Train the denoiser on unpaired reflectance/clean domains."""
    file_data = load_config_file(config_path) if config_path else {}
    cfg = make_ndm_config(file_data, iterations=iterations, seed=seed)
    manifest = DatasetManifest.load(_require_file(manifest_path, "manifest"))
    if split not in manifest.unpaired:
        raise click.ClickException(f"manifest has no unpaired split {split!r}")
    groups = manifest.unpaired[split]
    lows = ImageSet.from_paths(groups["noisy"])
    clean = ImageSet.from_paths(groups["clean"])
    out_dir = Path(out_dir)
    noisy = prepare_ndm_noisy_domain(
        _require_file(lum_ckpt, "light-up checkpoint"), lows, out_dir / "reflectance")
    backbone = _backbone_from_flags(backbone_weights, vgg_weights)
    ckpt = train_ndm(cfg, noisy, clean, backbone, out_dir, resume_from=resume_from)
    click.echo(f"wrote {ckpt}")


@main.command("fit-niqe")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--min-images", default=50, type=int)
def fit_niqe_cmd(corpus_dir, out_path, min_images):
    """Fit the pristine natural-statistics model from a directory of images."""
    paths = _image_paths(Path(corpus_dir))
    imgs = []
    for p in paths:
        img = load_image(p)
        imgs.append(img if img.shape[2] == 3 else np.repeat(img, 3, axis=2))
    try:
        model = fit_niqe_model(imgs, min_images=min_images)
    except ValueError as e:
        raise click.ClickException(str(e))
    model.save(out_path)
    click.echo(f"wrote {out_path} (corpus {model.corpus_hash[:12]})")


@main.command("make-manifest")
@click.option("--lol-dir", "lol_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--unpaired-clean", default=None, type=click.Path(),
              help="Directory of normal-light images for the unpaired split.")
@click.option("--unpaired-count", default=481, type=int)
def make_manifest_cmd(lol_dir, out_path, unpaired_clean, unpaired_count):
    """Build a manifest JSON from a LOL-style directory tree."""
    manifest = DatasetManifest.from_lol_dir(lol_dir)
    if unpaired_clean:
        clean = [str(p) for p in _image_paths(Path(unpaired_clean))][:unpaired_count]
        lows = [low for low, _ in manifest.pairs.get("lol-train", [])][:unpaired_count]
        manifest.unpaired["unpaired"] = {"noisy": lows, "clean": clean}
    manifest.save(out_path)
    click.echo(f"wrote {out_path}")


STUDIES = ("prior", "lum-loss", "ndm-loss", "denoiser")


@main.command("ablate")
@click.option("--study", required=True, type=click.Choice(STUDIES))
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--train-split", default="lol-train")
@click.option("--test-split", default="lol-test")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--epochs", default=None, type=int, help="Override training epochs (smoke runs).")
@click.option("--iterations", default=None, type=int)
@click.option("--lum", "lum_ckpt", default=None, type=click.Path(),
              help="Trained light-up checkpoint (ndm-loss / denoiser studies).")
@click.option("--niqe-model", default=None, type=click.Path())
@click.option("--work-dir", default=None, type=click.Path())
@add_options(backbone_options)
def ablate_cmd(study, manifest_path, train_split, test_split, config_path, out_csv,
               epochs, iterations, lum_ckpt, niqe_model, work_dir,
               backbone_weights, vgg_weights):
    """Train an ablation grid and emit a results table CSV."""
    file_data = load_config_file(config_path) if config_path else {}
    manifest = DatasetManifest.load(_require_file(manifest_path, "manifest"))
    backbone = _backbone_from_flags(backbone_weights, vgg_weights)
    model = _resolve_niqe_model(niqe_model)
    test_pairs = PairedImageSet.from_manifest(manifest, test_split)
    work = Path(work_dir) if work_dir else Path(out_csv).parent / f"ablate_{study}"
    work.mkdir(parents=True, exist_ok=True)

    def eval_reflectance(lum_net, nets=None):
        scores = []
        for low, gt in zip(test_pairs.low.images, test_pairs.high.images):
            out = decompose(lum_net, low.astype(np.float64)).reflectance
            if nets is not None:
                out = np.clip(denoise(nets, out), 0.0, 1.0)
            row = [psnr(out, gt.astype(np.float64)), ssim(out, gt.astype(np.float64))]
            row.append(_safe_niqe(out, model) if model else float("nan"))
            scores.append(row)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN niqe column
            return [float(np.nanmean(col)) for col in zip(*scores)]

    rows = []
    if study in ("prior", "lum-loss"):
        lows = ImageSet.from_paths([low for low, _ in manifest.pairs[train_split]])
        if study == "prior":
            variants = [(kind, {"prior": kind}) for kind in PRIOR_KINDS]
        else:
            variants = [
                ("w/o prior", {"use_prior": False}),
                ("w/o recon", {"use_recon": False}),
                ("w/o smooth", {"use_is": False}),
                ("full", {}),
            ]
        for name, tweaks in variants:
            cfg = make_lum_config(file_data, epochs=epochs, **tweaks)
            ckpt = train_lum(cfg, lows, backbone, work / name.replace("/", "_").replace(" ", "_"))
            net, _ = load_lum(ckpt)
            rows.append([name] + eval_reflectance(net))
    elif study == "ndm-loss":
        lum_net, rows_src = _ablate_ndm_prep(lum_ckpt, manifest, train_split, work)
        noisy, clean = rows_src
        leave_outs = [("w/o adv", "adv"), ("w/o kl", "kl"), ("w/o per", "per"),
                      ("w/o cc", "cc"), ("w/o bc", "bc"), ("w/o rec", "rec"), ("full", None)]
        for name, dropped in leave_outs:
            cfg = make_ndm_config(
                file_data, iterations=iterations,
                disabled_losses=(dropped,) if dropped else (),
            )
            ckpt = train_ndm(cfg, noisy, clean, backbone, work / name.replace("/", "_").replace(" ", "_"))
            nets, _ = load_ndm(ckpt)
            rows.append([name] + eval_reflectance(lum_net, nets))
    else:  # denoiser
        lum_net, (noisy, clean) = _ablate_ndm_prep(lum_ckpt, manifest, train_split, work)
        rows.append(["lum-only"] + eval_reflectance(lum_net) + ["measured"])
        for name, scores in DENOISER_BASELINES.items():
            rows.append([f"lum+{name}"] + list(scores) + ["published"])
        cfg = make_ndm_config(file_data, iterations=iterations)
        ckpt = train_ndm(cfg, noisy, clean, backbone, work / "ndm")
        nets, _ = load_ndm(ckpt)
        rows.append(["lum+ndm"] + eval_reflectance(lum_net, nets) + ["measured"])

    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    header = ["variant", "psnr", "ssim", "niqe"] + (["source"] if study == "denoiser" else [])
    with open(out_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [f"{v:.4f}" if isinstance(v, float) else v for v in row[1:]])
    click.echo(f"wrote {out_csv} ({len(rows)} rows)")


def _ablate_ndm_prep(lum_ckpt, manifest, train_split, work):
    if lum_ckpt is None:
        raise click.ClickException("this study needs --lum (a trained light-up checkpoint)")
    lum_net, _ = load_lum(_require_file(lum_ckpt, "light-up checkpoint"))
    if "unpaired" in manifest.unpaired:
        groups = manifest.unpaired["unpaired"]
        lows = ImageSet.from_paths(groups["noisy"])
        clean = ImageSet.from_paths(groups["clean"])
    else:
        lows = ImageSet.from_paths([low for low, _ in manifest.pairs[train_split]])
        clean = ImageSet.from_paths([high for _, high in manifest.pairs[train_split]])
    noisy = prepare_ndm_noisy_domain(lum_ckpt, lows, work / "reflectance")
    return lum_net, (noisy, clean)


if __name__ == "__main__":
    main()
