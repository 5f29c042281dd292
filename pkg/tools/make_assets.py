#!/usr/bin/env python3
"""Regenerate the bundled package assets.

Fits the naturalness-score model on a pristine photographic corpus from
scikit-image's bundled sample data (public-domain/CC0 images) and saves three
192x192 crops used by the test suite. Run from the repository root:

    python3 tools/make_assets.py
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import skimage.data as data  # noqa: E402

from lowlight.imaging import save_image  # noqa: E402
from lowlight.niqe import fit_niqe_params, save_ns_params  # noqa: E402

ASSETS = Path(__file__).resolve().parents[1] / "src" / "lowlight" / "assets"

CORPUS = (
    "astronaut",
    "camera",
    "chelsea",
    "coffee",
    "moon",
    "immunohistochemistry",
    "hubble_deep_field",
    "coins",
    "page",
    "text",
)

# (name, source image, top, left) for the bundled 192x192 test crops
CROPS = (
    ("photo_a.png", "astronaut", 30, 120),
    ("photo_b.png", "chelsea", 60, 130),
    ("photo_c.png", "coffee", 120, 240),
)


def to_chw(img):
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = np.stack([arr] * 3)
    else:
        arr = arr.transpose(2, 0, 1)
    return arr


def main():
    ASSETS.mkdir(parents=True, exist_ok=True)
    (ASSETS / "images").mkdir(exist_ok=True)

    corpus = [to_chw(getattr(data, name)()) for name in CORPUS]
    params = fit_niqe_params(corpus, note=f"fitted on skimage samples: {', '.join(CORPUS)}")
    save_ns_params(params, ASSETS / "niqe_params.npz")
    print(f"wrote {ASSETS / 'niqe_params.npz'} (mu dim {params.mu.shape[0]})")

    for out_name, source, top, left in CROPS:
        img = to_chw(getattr(data, source)())
        crop = img[:, top:top + 192, left:left + 192]
        assert crop.shape == (3, 192, 192), crop.shape
        save_image(crop, ASSETS / "images" / out_name)
        print(f"wrote {ASSETS / 'images' / out_name}")


if __name__ == "__main__":
    main()
