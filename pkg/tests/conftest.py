import numpy as np
import pytest

from lowlight.imaging import save_image

# small widths keep desk-scale runs fast; every width is manifest-driven
TINY_ARCH = {
    "n_width": 6, "r_width": 6, "l_width": 6,
    "cg_width": 6, "ce_width": 4, "oec_width": 6,
    "attention_reduction": 2,
}

DESK_ARCH = {
    "n_width": 16, "r_width": 16, "l_width": 16,
    "cg_width": 16, "ce_width": 8, "oec_width": 16,
    "attention_reduction": 4,
}

LUMA = np.array([0.2126, 0.7152, 0.0722])


def textured_image(seed, h=128, w=128, mean_luma=None):
    """Procedural scene: smooth illumination field times detailed reflectance."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= h
    xx /= w
    illum = 0.55 + 0.35 * np.sin(
        2 * np.pi * (rng.uniform(0.4, 1.2) * xx + rng.uniform(0.4, 1.2) * yy + rng.uniform())
    )
    illum = np.clip(illum, 0.15, 1.0)
    img = np.zeros((3, h, w))
    img += rng.uniform(0.3, 0.9, size=3)[:, None, None]
    for _ in range(8):
        y0, x0 = rng.integers(0, h - 10), rng.integers(0, w - 10)
        hh, ww = rng.integers(8, h // 2), rng.integers(8, w // 2)
        img[:, y0:y0 + hh, x0:x0 + ww] = rng.uniform(0.1, 1.0, size=3)[:, None, None]
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (rng.uniform(4, 9) * xx + rng.uniform(0, 2) * yy))
    img = 0.8 * img + 0.2 * stripes[None]
    img += rng.normal(0, 0.02, img.shape)
    img = np.clip(img * illum[None], 0.0, 1.0)
    if mean_luma is not None:
        current = float(np.tensordot(LUMA, img, axes=(0, 0)).mean())
        img = np.clip(img * (mean_luma / max(current, 1e-6)), 0.0, 1.0)
    return img.astype(np.float32)


def mean_luma(img):
    return float(np.tensordot(LUMA, img, axes=(0, 0)).mean())


@pytest.fixture
def make_dataset(tmp_path):
    """Factory writing a flat directory of textured toy images."""

    def _make(count, name="data", size=128, luma=0.25, seed0=100):
        root = tmp_path / name
        root.mkdir(parents=True, exist_ok=True)
        for k in range(count):
            save_image(textured_image(seed0 + k, h=size, w=size, mean_luma=luma),
                       root / f"img{k:02d}.png")
        return root

    return _make
