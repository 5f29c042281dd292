"""No-reference naturalness score from natural-scene statistics.

The score measures how far an image's MSCN (mean-subtracted,
contrast-normalized) coefficient statistics sit from a multivariate Gaussian
model fitted on pristine photographs; lower is better. Per 96x96 patch and
per scale (full and half resolution) we fit a generalized Gaussian to the
MSCN coefficients and asymmetric generalized Gaussians to horizontal,
vertical, and pooled diagonal pairwise products. Pooling the two diagonal
orientations makes the score exactly symmetric under horizontal flips.

The bundled model parameters are fitted on a small pristine corpus, so scores
are comparable within this package but not with other NIQE implementations.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
from scipy.special import gamma as gamma_fn

from .errors import DependencyError, InvalidInputError
from .imaging import luma, validate_image

PATCH_SIZE = 96
FEATURES_PER_SCALE = 14
FEATURE_DIM = 2 * FEATURES_PER_SCALE
SHARPNESS_FRACTION = 0.75
_STATS_SIGMA = 7.0 / 6.0

_SHAPE_GRID = np.arange(0.2, 10.001, 0.001)
_GGD_RATIO = (
    gamma_fn(1.0 / _SHAPE_GRID) * gamma_fn(3.0 / _SHAPE_GRID)
    / gamma_fn(2.0 / _SHAPE_GRID) ** 2
)
_AGGD_RATIO = (
    gamma_fn(2.0 / _SHAPE_GRID) ** 2
    / (gamma_fn(1.0 / _SHAPE_GRID) * gamma_fn(3.0 / _SHAPE_GRID))
)
_EPS = 1e-12


@dataclass
class NsParams:
    """Natural-scene-statistics model: feature mean and covariance."""

    mu: np.ndarray
    cov: np.ndarray
    patch_size: int = PATCH_SIZE
    note: str = ""

    def validate(self):
        if self.mu.shape != (FEATURE_DIM,) or self.cov.shape != (FEATURE_DIM, FEATURE_DIM):
            raise DependencyError(
                f"NsParams dimensions {self.mu.shape}/{self.cov.shape} do not match "
                f"this feature layout (expected {FEATURE_DIM})"
            )
        return self


def save_ns_params(params, path):
    np.savez(
        path,
        mu=params.mu,
        cov=params.cov,
        patch_size=np.asarray(params.patch_size),
        note=np.asarray(params.note),
    )


def load_ns_params(path):
    path = Path(path)
    if not path.is_file():
        raise DependencyError(f"NIQE parameter file not found: {path}")
    try:
        with np.load(path) as data:
            params = NsParams(
                mu=data["mu"].astype(np.float64),
                cov=data["cov"].astype(np.float64),
                patch_size=int(data["patch_size"]),
                note=str(data["note"]),
            )
    except (OSError, ValueError, KeyError) as exc:
        raise DependencyError(f"unreadable NIQE parameter file {path}: {exc}") from exc
    return params.validate()


_DEFAULT_PARAMS = None


def default_params():
    """Parameters fitted on the bundled pristine corpus (shipped with the package)."""
    global _DEFAULT_PARAMS
    if _DEFAULT_PARAMS is None:
        ref = resources.files("lowlight").joinpath("assets/niqe_params.npz")
        with resources.as_file(ref) as path:
            _DEFAULT_PARAMS = load_ns_params(path)
    return _DEFAULT_PARAMS


def _local_mean(img, taps):
    out = ndi.correlate1d(img, taps, axis=0, mode="nearest")
    return ndi.correlate1d(out, taps, axis=1, mode="nearest")


def _gaussian_taps7():
    x = np.arange(7, dtype=np.float64) - 3.0
    g = np.exp(-0.5 * (x / _STATS_SIGMA) ** 2)
    return g / g.sum()


def mscn(gray255):
    """MSCN coefficients and the local-deviation field of a [0,255] image."""
    taps = _gaussian_taps7()
    mu = _local_mean(gray255, taps)
    sigma = np.sqrt(np.clip(_local_mean(gray255 * gray255, taps) - mu * mu, 0.0, None))
    return (gray255 - mu) / (sigma + 1.0), sigma


def ggd_fit(x):
    """Generalized Gaussian moment fit: returns (shape, variance)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    sq = float(np.mean(x * x))
    mean_abs = float(np.mean(np.abs(x)))
    rho = sq / max(mean_abs * mean_abs, _EPS)
    alpha = float(_SHAPE_GRID[np.argmin(np.abs(_GGD_RATIO - rho))])
    return alpha, sq


def aggd_fit(x):
    """Asymmetric generalized Gaussian moment fit.

    Returns (shape, mean, left variance, right variance); the mean feature is
    derived from the fitted left/right scales.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    left = x[x < 0]
    right = x[x > 0]
    lsq = float(np.mean(left * left)) if left.size else _EPS
    rsq = float(np.mean(right * right)) if right.size else _EPS
    gamma_hat = np.sqrt(lsq) / max(np.sqrt(rsq), _EPS)
    mean_abs = float(np.mean(np.abs(x)))
    sq = float(np.mean(x * x))
    r_hat = (mean_abs * mean_abs) / max(sq, _EPS)
    r_hat_norm = (
        r_hat * (gamma_hat ** 3 + 1.0) * (gamma_hat + 1.0)
        / max((gamma_hat ** 2 + 1.0) ** 2, _EPS)
    )
    alpha = float(_SHAPE_GRID[np.argmin((_AGGD_RATIO - r_hat_norm) ** 2)])
    mean = (np.sqrt(rsq) - np.sqrt(lsq)) * (
        gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha)
    )
    return alpha, float(mean), lsq, rsq


def _patch_features(p):
    """14 statistics of one MSCN patch (GGD + H/V/pooled-diagonal AGGD)."""
    feats = list(ggd_fit(p))
    horizontal = (p[:, :-1] * p[:, 1:]).ravel()
    vertical = (p[:-1, :] * p[1:, :]).ravel()
    diag = np.concatenate(
        [(p[:-1, :-1] * p[1:, 1:]).ravel(), (p[:-1, 1:] * p[1:, :-1]).ravel()]
    )
    for products in (horizontal, vertical, diag):
        feats.extend(aggd_fit(products))
    return feats


def _half_size(img):
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    c = img[:h, :w]
    return 0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2])


def image_features(gray01, patch_size=PATCH_SIZE):
    """Per-patch feature matrix and patch sharpness for a [0,1] grayscale image."""
    h, w = gray01.shape
    ny, nx = h // patch_size, w // patch_size
    if ny == 0 or nx == 0:
        raise InvalidInputError(
            f"image {gray01.shape} too small for {patch_size}x{patch_size} patches"
        )
    img = gray01[: ny * patch_size, : nx * patch_size].astype(np.float64) * 255.0
    m1, sigma1 = mscn(img)
    m2, _ = mscn(_half_size(img))
    half = patch_size // 2
    feats, sharpness = [], []
    for by in range(ny):
        for bx in range(nx):
            p1 = m1[by * patch_size:(by + 1) * patch_size, bx * patch_size:(bx + 1) * patch_size]
            p2 = m2[by * half:(by + 1) * half, bx * half:(bx + 1) * half]
            feats.append(_patch_features(p1) + _patch_features(p2))
            s1 = sigma1[by * patch_size:(by + 1) * patch_size, bx * patch_size:(bx + 1) * patch_size]
            sharpness.append(float(s1.mean()))
    return np.asarray(feats, dtype=np.float64), np.asarray(sharpness)


def fit_niqe_params(images, patch_size=PATCH_SIZE, sharpness_fraction=SHARPNESS_FRACTION, note=""):
    """Fit the pristine model on a corpus of (C,H,W) images in [0,1].

    Within each image only patches whose local deviation exceeds
    ``sharpness_fraction`` of the image's sharpest patch contribute, mirroring
    the usual practice of fitting on textured regions.
    """
    rows = []
    for img in images:
        validate_image(img)
        feats, sharpness = image_features(luma(img), patch_size)
        keep = sharpness >= sharpness_fraction * sharpness.max()
        rows.append(feats[keep])
    all_feats = np.concatenate(rows, axis=0)
    if all_feats.shape[0] < FEATURE_DIM:
        raise InvalidInputError(
            f"corpus too small: {all_feats.shape[0]} patches for {FEATURE_DIM}-dim model"
        )
    mu = all_feats.mean(axis=0)
    cov = np.cov(all_feats, rowvar=False)
    return NsParams(mu=mu, cov=cov, patch_size=patch_size, note=note)


def niqe(img, params=None):
    """Naturalness score of a (C,H,W) image in [0,1]; lower is better."""
    validate_image(img)
    if params is None:
        params = default_params()
    params.validate()
    feats, _ = image_features(luma(img), params.patch_size)
    mu_d = feats.mean(axis=0)
    cov_d = (
        np.cov(feats, rowvar=False)
        if feats.shape[0] > 1
        else np.zeros((FEATURE_DIM, FEATURE_DIM))
    )
    pooled = (params.cov + cov_d) / 2.0
    delta = params.mu - mu_d
    quad = float(delta @ np.linalg.pinv(pooled) @ delta)
    return float(np.sqrt(max(quad, 0.0)))
