#!/usr/bin/env python3
"""Fit the packaged pristine NIQE model from scikit-image's sample photos.

The stand-in corpus is built by tiling a dozen natural photographs into
192x192 crops (each crop counts as one pristine image). Scores from this
model are comparable with each other but not with models fitted on other
corpora; see the README.

Usage: python scripts/fit_pristine_niqe.py [out.npz]
"""

import sys
from pathlib import Path

import numpy as np
import skimage.data as data

from relight.niqe import fit_niqe_model

PHOTOS = [
    "astronaut", "camera", "chelsea", "coffee", "coins", "hubble_deep_field",
    "immunohistochemistry", "moon", "rocket", "cat", "clock", "gravel",
    "grass", "brick",
]
TILE = 192


def tiles(img: np.ndarray):
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    img = img.astype(np.float64) / 255.0
    h, w, _ = img.shape
    for y in range(0, h - TILE + 1, TILE):
        for x in range(0, w - TILE + 1, TILE):
            yield img[y : y + TILE, x : x + TILE, :]


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "src" / "relight" / "models" / "niqe_pristine.npz"
    )
    corpus = []
    for name in PHOTOS:
        img = getattr(data, name)()
        corpus.extend(tiles(img))
    print(f"corpus: {len(corpus)} tiles of {TILE}px from {len(PHOTOS)} photos")
    model = fit_niqe_model(corpus, min_images=50)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"wrote {out} (corpus hash {model.corpus_hash[:12]})")


if __name__ == "__main__":
    main()
