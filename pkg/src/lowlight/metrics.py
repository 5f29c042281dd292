"""Full-reference image quality metrics: PSNR, SSIM, deep feature distance.

SSIM follows the classical windowed formulation (11-tap Gaussian, sigma 1.5,
K1=0.01, K2=0.03) computed on luma over valid windows. The feature distance
reuses the training perceptual loss and is reported as "LPIPS-like": it is a
deep feature-space distance, not the calibrated LPIPS metric.
"""

import numpy as np
import scipy.ndimage as ndi
import torch

from .errors import DependencyError, InvalidInputError, ShapeError
from .imaging import luma, validate_image
from .losses import perceptual_loss

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b, who):
    validate_image(a, f"{who}: first image")
    validate_image(b, f"{who}: second image")
    if a.shape != b.shape:
        raise ShapeError(f"{who}: shapes differ {a.shape} vs {b.shape}")


def psnr(a, b):
    """Peak signal-to-noise ratio in dB over all channels; capped at 100."""
    _check_pair(a, b, "psnr")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_taps(n=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _windowed(img, taps):
    # separable correlation, then crop to windows fully inside the image
    pad = (len(taps) - 1) // 2
    out = ndi.correlate1d(img, taps, axis=0, mode="reflect")
    out = ndi.correlate1d(out, taps, axis=1, mode="reflect")
    return out[pad:-pad, pad:-pad]


def ssim(a, b):
    """Mean structural similarity of the luma planes."""
    _check_pair(a, b, "ssim")
    x = luma(a).astype(np.float64)
    y = luma(b).astype(np.float64)
    if min(x.shape) < SSIM_WINDOW:
        raise InvalidInputError(
            f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window: {x.shape}"
        )
    taps = _gaussian_taps()
    mu_x = _windowed(x, taps)
    mu_y = _windowed(y, taps)
    var_x = _windowed(x * x, taps) - mu_x ** 2
    var_y = _windowed(y * y, taps) - mu_y ** 2
    cov = _windowed(x * y, taps) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def perceptual_distance(extractor, a, b):
    """Deep feature-space distance (LPIPS-like, not calibrated LPIPS)."""
    if extractor is None:
        raise DependencyError("perceptual distance requested but no extractor is loaded")
    _check_pair(a, b, "perceptual_distance")
    with torch.no_grad():
        ta = torch.from_numpy(np.ascontiguousarray(a)).unsqueeze(0)
        tb = torch.from_numpy(np.ascontiguousarray(b)).unsqueeze(0)
        return float(perceptual_loss(extractor, ta, tb))
