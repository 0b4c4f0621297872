"""Dataset manifests and seeded patch sampling.

A manifest is a JSON file naming splits: paired splits carry [low, high]
path pairs, unpaired splits carry separate noisy/clean lists. Images are
loaded once into memory (float32); crops are drawn per batch.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imaging import load_image

__all__ = [
    "DatasetManifest",
    "PairedImageSet",
    "ImageSet",
    "sample_patches",
    "sample_paired_patches",
    "batch_to_tensor",
    "tensor_to_images",
]


@dataclass
class DatasetManifest:
    """Named splits with file lists and pairing info."""

    pairs: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    unpaired: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path) as f:
            data = json.load(f)
        m = cls()
        base = path.parent
        for name, spec in data.get("splits", {}).items():
            if "pairs" in spec:
                m.pairs[name] = [
                    (str(base / low), str(base / high)) for low, high in spec["pairs"]
                ]
            else:
                m.unpaired[name] = {
                    key: [str(base / p) for p in paths] for key, paths in spec.items()
                }
        m.validate()
        return m

    def save(self, path) -> None:
        splits = {}
        for name, pairs in self.pairs.items():
            splits[name] = {"pairs": [[low, high] for low, high in pairs]}
        for name, groups in self.unpaired.items():
            splits[name] = {k: list(v) for k, v in groups.items()}
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump({"splits": splits}, f, indent=2)

    def split_files(self, name: str) -> list[str]:
        if name in self.pairs:
            return [p for pair in self.pairs[name] for p in pair]
        if name in self.unpaired:
            return [p for group in self.unpaired[name].values() for p in group]
        raise KeyError(f"no split named {name!r}; have {sorted(self.pairs) + sorted(self.unpaired)}")

    def validate(self) -> None:
        """Train/test disjointness and path resolution."""
        names = list(self.pairs) + list(self.unpaired)
        train_like = [n for n in names if "train" in n]
        test_like = [n for n in names if "test" in n or "eval" in n]
        for tr in train_like:
            tr_files = set(self.split_files(tr))
            for te in test_like:
                overlap = tr_files & set(self.split_files(te))
                if overlap:
                    raise ValueError(f"splits {tr!r} and {te!r} share files: {sorted(overlap)[:3]}")
        missing = [p for n in names for p in self.split_files(n) if not Path(p).is_file()]
        if missing:
            raise FileNotFoundError(f"{len(missing)} manifest paths do not resolve, e.g. {missing[:3]}")

    @classmethod
    def from_lol_dir(cls, root) -> "DatasetManifest":
        """Build a manifest from a LOL-style directory tree.

        Accepts either train/{low,high} + test/{low,high} or the stock
        our485/{low,high} + eval15/{low,high} layout.
        """
        root = Path(root)
        layouts = [("train", "test"), ("our485", "eval15")]
        for train_name, test_name in layouts:
            if (root / train_name).is_dir():
                m = cls()
                for split, dirname in (("lol-train", train_name), ("lol-test", test_name)):
                    low_dir, high_dir = root / dirname / "low", root / dirname / "high"
                    if not low_dir.is_dir():
                        continue
                    lows = sorted(low_dir.iterdir())
                    m.pairs[split] = [
                        (str(p), str(high_dir / p.name)) for p in lows if (high_dir / p.name).is_file()
                    ]
                m.validate()
                return m
        raise FileNotFoundError(f"no recognizable LOL layout under {root}")


class ImageSet:
    """Images of one domain, preloaded as float32 arrays."""

    def __init__(self, images):
        self.images = [np.ascontiguousarray(im, dtype=np.float32) for im in images]
        if not self.images:
            raise ValueError("image set is empty")

    @classmethod
    def from_paths(cls, paths) -> "ImageSet":
        return cls([load_image(p) for p in paths])

    def min_side(self) -> int:
        return min(min(im.shape[0], im.shape[1]) for im in self.images)

    def __len__(self):
        return len(self.images)


class PairedImageSet:
    """Aligned image pairs (same index, same size per pair)."""

    def __init__(self, low, high):
        if len(low) != len(high):
            raise ValueError("paired sets must have equal length")
        self.low = ImageSet(low)
        self.high = ImageSet(high)
        for i, (a, b) in enumerate(zip(self.low.images, self.high.images)):
            if a.shape[:2] != b.shape[:2]:
                raise ValueError(f"pair {i} has mismatched sizes {a.shape} vs {b.shape}")

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, split: str) -> "PairedImageSet":
        pairs = manifest.pairs[split]
        return cls([load_image(p) for p, _ in pairs], [load_image(p) for _, p in pairs])

    def __len__(self):
        return len(self.low)


def _crop(img: np.ndarray, y: int, x: int, size: int) -> np.ndarray:
    return img[y : y + size, x : x + size, :]


def sample_patches(
    image_set: ImageSet,
    patch_size: int,
    batch_size: int,
    rng: np.random.Generator,
    augment: bool = False,
) -> np.ndarray:
    """Uniformly random crops from random images: [B, patch, patch, C]."""
    out = np.empty(
        (batch_size, patch_size, patch_size, image_set.images[0].shape[2]), dtype=np.float32
    )
    for b in range(batch_size):
        img = image_set.images[rng.integers(len(image_set))]
        h, w, _ = img.shape
        if patch_size > h or patch_size > w:
            raise ValueError(f"patch {patch_size} larger than image {h}x{w}")
        y = int(rng.integers(h - patch_size + 1))
        x = int(rng.integers(w - patch_size + 1))
        patch = _crop(img, y, x, patch_size)
        if augment and rng.random() < 0.5:
            patch = patch[:, ::-1, :]
        out[b] = patch
    return out


def sample_paired_patches(
    paired: PairedImageSet,
    patch_size: int,
    batch_size: int,
    rng: np.random.Generator,
    augment: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Paired crops taken at identical coordinates in both images."""
    c_low = paired.low.images[0].shape[2]
    c_high = paired.high.images[0].shape[2]
    low = np.empty((batch_size, patch_size, patch_size, c_low), dtype=np.float32)
    high = np.empty((batch_size, patch_size, patch_size, c_high), dtype=np.float32)
    for b in range(batch_size):
        i = int(rng.integers(len(paired)))
        img_l, img_h = paired.low.images[i], paired.high.images[i]
        h, w, _ = img_l.shape
        if patch_size > h or patch_size > w:
            raise ValueError(f"patch {patch_size} larger than image {h}x{w}")
        y = int(rng.integers(h - patch_size + 1))
        x = int(rng.integers(w - patch_size + 1))
        pl, ph = _crop(img_l, y, x, patch_size), _crop(img_h, y, x, patch_size)
        if augment and rng.random() < 0.5:
            pl, ph = pl[:, ::-1, :], ph[:, ::-1, :]
        low[b], high[b] = pl, ph
    return low, high


class BatchFeed:
    """Batches for a training loop, optionally produced by loader threads.

    With workers == 1 batches are drawn inline from the given generator, so
    the sequence is a pure function of the seed (the determinism contract).
    With workers > 1, that many producer threads draw from independently
    seeded generators into a bounded queue; ordering across workers is then
    scheduler-dependent.
    """

    def __init__(self, make_batch, seed: int, workers: int = 1, depth: int = 8):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self._make_batch = make_batch
        self._workers = workers
        if workers == 1:
            self._rng = np.random.default_rng(seed)
        else:
            self._queue = queue.Queue(maxsize=depth)
            self._stop = threading.Event()
            self._threads = [
                threading.Thread(
                    target=self._produce, args=(np.random.default_rng(seed + i),),
                    daemon=True,
                )
                for i in range(workers)
            ]
            for t in self._threads:
                t.start()

    def _produce(self, rng):
        while not self._stop.is_set():
            batch = self._make_batch(rng)
            while not self._stop.is_set():
                try:
                    self._queue.put(batch, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def next(self):
        if self._workers == 1:
            return self._make_batch(self._rng)
        return self._queue.get()

    def close(self):
        if self._workers > 1:
            self._stop.set()
            for t in self._threads:
                t.join(timeout=2.0)

    def rng_state(self):
        """Serializable sampler state (single-worker mode only)."""
        if self._workers != 1:
            raise RuntimeError("sampler state is only defined for workers == 1")
        return self._rng.bit_generator.state

    def set_rng_state(self, state) -> None:
        if self._workers != 1:
            raise RuntimeError("sampler state is only defined for workers == 1")
        self._rng.bit_generator.state = state


def batch_to_tensor(batch: np.ndarray) -> torch.Tensor:
    """[B, H, W, C] numpy -> [B, C, H, W] float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))


def tensor_to_images(t: torch.Tensor) -> list[np.ndarray]:
    arr = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return [arr[i] for i in range(arr.shape[0])]
