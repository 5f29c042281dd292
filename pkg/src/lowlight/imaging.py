"""Image representation, I/O, augmentation, and synthetic exposure pairing.

Images are float32 numpy arrays of shape (C, H, W) with C in {1, 3} and
values in [0, 1] (normalized sRGB). Training consumes two low-light
observations of the same scene; when a dataset only has single images the
second observation is manufactured by a spatially uniform gain/gamma map,
which leaves reflectance untouched by construction.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
from PIL import Image, UnidentifiedImageError

from .errors import (
    DecodeError,
    ImageWriteError,
    InvalidInputError,
    NotFoundError,
)

MIN_SIDE = 8
MAX_ROTATION_DEG = 15.0
BRIGHTNESS_GAIN_RANGE = (0.9, 1.1)
SYNTH_GAIN_RANGE = (0.7, 1.3)
SYNTH_GAMMA_RANGE = (0.8, 1.2)

# Rec.709 luma weights, used everywhere a single brightness channel is needed
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722], dtype=np.float32)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def validate_image(img, name="image"):
    """Check the (C,H,W) float [0,1] contract; raise InvalidInputError otherwise."""
    if not isinstance(img, np.ndarray):
        raise InvalidInputError(f"{name}: expected numpy array, got {type(img).__name__}")
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise InvalidInputError(f"{name}: expected (C,H,W) with C in {{1,3}}, got {img.shape}")
    if img.shape[1] < MIN_SIDE or img.shape[2] < MIN_SIDE:
        raise InvalidInputError(f"{name}: spatial size must be >= {MIN_SIDE}, got {img.shape[1:]}")
    if not np.issubdtype(img.dtype, np.floating):
        raise InvalidInputError(f"{name}: expected float dtype, got {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError(f"{name}: contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise InvalidInputError(f"{name}: values outside [0,1] ({img.min():.4g}..{img.max():.4g})")
    return img


def luma(img):
    """Rec.709 luma of a (3,H,W) image, returned as (H,W)."""
    if img.shape[0] == 1:
        return img[0]
    return np.tensordot(LUMA_WEIGHTS, img, axes=(0, 0))


@dataclass
class ExposurePair:
    """Two registered low-light observations of one scene."""

    low_a: np.ndarray
    low_b: np.ndarray
    scene_id: str

    def validate(self):
        validate_image(self.low_a, "low_a")
        validate_image(self.low_b, "low_b")
        if self.low_a.shape != self.low_b.shape:
            raise InvalidInputError(
                f"pair members differ in shape: {self.low_a.shape} vs {self.low_b.shape}"
            )
        if not self.scene_id:
            raise InvalidInputError("scene_id must be non-empty")
        return self


def load_image(path):
    """Load a PNG/JPEG (8- or 16-bit) as a (3,H,W) float32 array in [0,1].

    Grayscale inputs are replicated to three channels; alpha is discarded.
    """
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise InvalidInputError(f"zero-area image: {path}")
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
                arr = np.asarray(im, dtype=np.float32) / 65535.0
                arr = np.repeat(arr[None, :, :], 3, axis=0)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
                arr = arr.transpose(2, 0, 1)
    except InvalidInputError:
        raise
    except (UnidentifiedImageError, SyntaxError, ValueError, OSError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    arr = np.clip(arr, 0.0, 1.0).astype(np.float32)
    return validate_image(arr, str(path))


def save_image(img, path):
    """Write an image as 8-bit PNG (atomically; no partial files on failure)."""
    validate_image(img)
    path = Path(path)
    data = np.round(np.asarray(img, dtype=np.float64) * 255.0).astype(np.uint8)
    if data.shape[0] == 1:
        pil = Image.fromarray(data[0], mode="L")
    else:
        pil = Image.fromarray(data.transpose(1, 2, 0), mode="RGB")
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        pil.save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise ImageWriteError(f"cannot write {path}: {exc}") from exc


def resize(img, h, w):
    """Bilinear resize to (h, w) with endpoint-aligned sampling.

    Output pixel k along an axis of length n samples the input at
    k*(n_in-1)/(n-1), so corners map to corners exactly.
    """
    validate_image(img)
    if h < MIN_SIDE or w < MIN_SIDE:
        raise InvalidInputError(f"target size must be >= {MIN_SIDE}, got {(h, w)}")
    c, h_in, w_in = img.shape
    if (h_in, w_in) == (h, w):
        return img.copy()
    out = _interp_axis(img.astype(np.float64), 1, h)
    out = _interp_axis(out, 2, w)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _interp_axis(arr, axis, n_out):
    n_in = arr.shape[axis]
    if n_in == n_out:
        return arr
    pos = np.linspace(0.0, n_in - 1, n_out)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def rotate_reflect(img, angle_deg):
    """Rotate about the image center (bilinear), filling borders by reflection."""
    if angle_deg == 0.0:
        return img.copy()
    out = ndi.rotate(
        img, angle_deg, axes=(2, 1), reshape=False, order=1, mode="reflect"
    )
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class AugmentParams:
    """One augmentation draw. Geometry is shared by both pair members."""

    flip: bool
    angle_deg: float
    gain_a: float
    gain_b: float


def sample_augment_params(seed):
    """Draw flip/rotation/brightness parameters deterministically from a seed."""
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < 0.5)
    angle = float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
    lo, hi = BRIGHTNESS_GAIN_RANGE
    gain_a = float(rng.uniform(lo, hi))
    gain_b = float(rng.uniform(lo, hi))
    return AugmentParams(flip=flip, angle_deg=angle, gain_a=gain_a, gain_b=gain_b)


def _apply_geometry(img, params):
    out = img[:, :, ::-1].copy() if params.flip else img
    return rotate_reflect(out, params.angle_deg)


def augment(pair, seed):
    """Apply one augmentation draw to a pair.

    The same flip decision and rotation angle hit both members (geometry must
    stay registered); the brightness gain is drawn per member. Gains are
    multiplicative so the Retinex product model is preserved.
    """
    pair.validate()
    params = sample_augment_params(seed)
    low_a = _apply_geometry(pair.low_a, params)
    low_b = _apply_geometry(pair.low_b, params)
    low_a = np.clip(low_a * params.gain_a, 0.0, 1.0).astype(np.float32)
    low_b = np.clip(low_b * params.gain_b, 0.0, 1.0).astype(np.float32)
    return ExposurePair(low_a=low_a, low_b=low_b, scene_id=pair.scene_id)


def apply_exposure(img, gain, gamma):
    """Spatially uniform exposure change: clamp(gain * img**gamma)."""
    out = gain * np.power(np.asarray(img, dtype=np.float64), gamma)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def synth_second_exposure(img, seed):
    """Manufacture a second observation of the scene under different exposure.

    The gain/gamma map is monotone and spatially uniform, so the underlying
    reflectance is shared between the two members by construction.
    """
    validate_image(img)
    rng = np.random.default_rng(seed)
    gain = float(rng.uniform(*SYNTH_GAIN_RANGE))
    gamma = float(rng.uniform(*SYNTH_GAMMA_RANGE))
    low_b = apply_exposure(img, gain, gamma)
    return ExposurePair(
        low_a=img.astype(np.float32), low_b=low_b, scene_id=f"synth-{seed}"
    )


@dataclass(frozen=True)
class PairSource:
    """Location of one training pair; path_b None means synthesize."""

    scene_id: str
    path_a: Path
    path_b: Path | None = None


def discover_pairs(root):
    """Scan a dataset directory for training pairs.

    Two layouts are supported: ``root/<scene_id>/{a.png,b.png}`` for real
    multi-exposure captures, and flat ``root/*.png`` for single images whose
    second exposure gets synthesized per draw.
    """
    root = Path(root)
    if not root.is_dir():
        raise NotFoundError(f"dataset directory not found: {root}")
    sources = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        path_a, path_b = sub / "a.png", sub / "b.png"
        if path_a.is_file() and path_b.is_file():
            sources.append(PairSource(scene_id=sub.name, path_a=path_a, path_b=path_b))
    if sources:
        return sources
    flat = sorted(
        p
        for p in root.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not flat:
        raise InvalidInputError(f"no images or scene pairs under {root}")
    return [PairSource(scene_id=p.stem, path_a=p) for p in flat]


def load_pair(source, synth_seed=0):
    """Materialize a PairSource, synthesizing the second member if needed."""
    low_a = load_image(source.path_a)
    if source.path_b is None:
        pair = synth_second_exposure(low_a, synth_seed)
        return ExposurePair(low_a=pair.low_a, low_b=pair.low_b, scene_id=source.scene_id)
    low_b = load_image(source.path_b)
    return ExposurePair(low_a=low_a, low_b=low_b, scene_id=source.scene_id).validate()
