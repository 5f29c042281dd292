"""Unsupervised low-light traffic image enhancement toolkit."""

__version__ = "0.1.0"

from .bundle import ModelBundle, build_bundle, load_checkpoint, save_checkpoint
from .decomposition import DecompositionResult, decompose
from .errors import (
    CheckpointError,
    ConfigError,
    DecodeError,
    DependencyError,
    ImageWriteError,
    InvalidInputError,
    LowlightError,
    NotFoundError,
    NumericalError,
    PairingError,
    ShapeError,
)
from .imaging import (
    ExposurePair,
    augment,
    discover_pairs,
    load_image,
    resize,
    save_image,
    synth_second_exposure,
)
from .losses import LossReport, LossWeights, RetinexCoeffs
from .refinement import EnhancedImage, RefinedPair, enhance, recompose, run_pipeline
from .training import TrainConfig, make_batches, train, train_step

__all__ = [
    "__version__",
    "ModelBundle", "build_bundle", "load_checkpoint", "save_checkpoint",
    "DecompositionResult", "decompose",
    "ExposurePair", "augment", "discover_pairs", "load_image", "resize",
    "save_image", "synth_second_exposure",
    "LossReport", "LossWeights", "RetinexCoeffs",
    "EnhancedImage", "RefinedPair", "enhance", "recompose", "run_pipeline",
    "TrainConfig", "make_batches", "train", "train_step",
    "LowlightError", "NotFoundError", "DecodeError", "InvalidInputError",
    "ImageWriteError", "ShapeError", "DependencyError", "NumericalError",
    "CheckpointError", "PairingError", "ConfigError",
]
