"""Pair sampling, optimization, checkpointing, and resumable runs.

Every batch is a pure function of (config seed, iteration), so a resumed run
continues bit-identically in full precision: the stream needs no carried RNG
state. Pairs cycle through seeded epoch permutations; each appearance gets a
fresh augmentation draw (and a fresh synthetic second exposure when the
dataset has no real pairs).
"""

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from .bundle import build_bundle, load_checkpoint, save_checkpoint
from .errors import CheckpointError, InvalidInputError, NumericalError
from .features import make_extractor
from .imaging import augment, load_image, resize, synth_second_exposure, ExposurePair
from .losses import LossReport, LossWeights, RetinexCoeffs, total_loss
from .refinement import run_pipeline

LOG_NAME = "log.csv"
LOG_FIELDS = ("iteration",) + LossReport.CSV_FIELDS


@dataclass
class TrainConfig:
    """Optimization recipe; defaults follow the published training setup."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 4
    max_iterations: int = 200_000
    image_size: int = 512
    seed: int = 0
    precision: str = "full"          # "full" or "reduced"
    checkpoint_every: int = 1000
    grad_clip_norm: float = 5.0
    device: str = "cpu"
    extractor: str = "builtin"
    illum_exponent: float = 0.2
    loss_weights: LossWeights = field(default_factory=LossWeights)
    retinex_coeffs: RetinexCoeffs = field(default_factory=RetinexCoeffs)

    def validate(self):
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidInputError("beta1/beta2 must lie in (0,1)")
        if self.batch_size < 1 or self.max_iterations < 1 or self.image_size < 8:
            raise InvalidInputError("batch_size/max_iterations/image_size out of range")
        if self.seed < 0:
            raise InvalidInputError("seed must be >= 0")
        if self.precision not in ("full", "reduced"):
            raise InvalidInputError(f"unknown precision mode: {self.precision!r}")
        if self.checkpoint_every < 1:
            raise InvalidInputError("checkpoint_every must be >= 1")
        if self.illum_exponent <= 0:
            raise InvalidInputError("illum_exponent must be > 0")
        self.loss_weights.validate()
        return self


@lru_cache(maxsize=64)
def _epoch_permutation(seed, epoch, n):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE90C, epoch]))
    return tuple(int(v) for v in rng.permutation(n))


class _ImageCache:
    """Loads each source image once; desk-scale datasets fit in memory."""

    def __init__(self):
        self._data = {}

    def get(self, path):
        key = str(path)
        if key not in self._data:
            self._data[key] = load_image(path)
        return self._data[key]


def _materialize(source, cache, synth_seed):
    low_a = cache.get(source.path_a)
    if source.path_b is None:
        pair = synth_second_exposure(low_a, synth_seed)
        return ExposurePair(pair.low_a, pair.low_b, source.scene_id)
    return ExposurePair(low_a, cache.get(source.path_b), source.scene_id)


def batch_for_iteration(sources, cfg, iteration, cache=None):
    """Build the (x_a, x_b) tensors for one iteration; pure given the seed."""
    if not sources:
        raise InvalidInputError("dataset is empty")
    cache = cache if cache is not None else _ImageCache()
    n = len(sources)
    size = cfg.image_size
    members_a, members_b = [], []
    for j in range(cfg.batch_size):
        position = (iteration - 1) * cfg.batch_size + j
        epoch, offset = divmod(position, n)
        source = sources[_epoch_permutation(cfg.seed, epoch, n)[offset]]
        synth_seed, aug_seed = (
            int(v) for v in np.random.SeedSequence([cfg.seed, iteration, j]).generate_state(2)
        )
        pair = augment(_materialize(source, cache, synth_seed), aug_seed)
        members_a.append(resize(pair.low_a, size, size))
        members_b.append(resize(pair.low_b, size, size))
    x_a = torch.from_numpy(np.stack(members_a))
    x_b = torch.from_numpy(np.stack(members_b))
    return x_a, x_b


def make_batches(sources, cfg, start_iteration=1, cache=None):
    """Infinite-until-max stream of augmented, resized exposure-pair batches."""
    cfg.validate()
    if not sources:
        raise InvalidInputError("dataset is empty")
    cache = cache if cache is not None else _ImageCache()
    for iteration in range(start_iteration, cfg.max_iterations + 1):
        yield iteration, batch_for_iteration(sources, cfg, iteration, cache)


def _check_finite(report):
    for name, value in [
        ("projection", report.projection),
        ("consistency", report.consistency),
        ("retinex", report.retinex),
        ("perceptual", report.perceptual),
        ("total", report.total),
        *report.retinex_breakdown.items(),
    ]:
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss term: {name}={value}", term=name)


def train_step(
    bundle,
    optimizer,
    batch,
    weights,
    coeffs=RetinexCoeffs(),
    extractor=None,
    grad_clip_norm=5.0,
    toggles=(True, True, True),
    scaler=None,
    autocast_ctx=None,
):
    """One optimization step; returns the pre-step LossReport."""
    x_a, x_b = batch
    use_cg, use_ce, use_oec = toggles
    ctx = autocast_ctx if autocast_ctx is not None else torch.autocast("cpu", enabled=False)
    with ctx:
        arts_a = run_pipeline(bundle, x_a, use_cg=use_cg, use_ce=use_ce, use_oec=use_oec)
        arts_b = run_pipeline(bundle, x_b, use_cg=use_cg, use_ce=use_ce, use_oec=use_oec)
        total, report = total_loss(
            weights, (x_a, x_b), (arts_a, arts_b), extractor=extractor, coeffs=coeffs
        )
    _check_finite(report)
    optimizer.zero_grad(set_to_none=True)
    if scaler is not None and scaler.is_enabled():
        scaler.scale(total).backward()
        scaler.unscale_(optimizer)
        torch.nn.utils.clip_grad_norm_(list(bundle.parameters()), grad_clip_norm)
        scaler.step(optimizer)
        scaler.update()
    else:
        total.backward()
        torch.nn.utils.clip_grad_norm_(list(bundle.parameters()), grad_clip_norm)
        optimizer.step()
    return report


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.detach() ** 2).sum())
    return math.sqrt(total)


def optimizer_to_arrays(optimizer, params):
    """Flatten Adam moments into named numpy arrays for the checkpoint."""
    arrays = {}
    for idx, p in enumerate(params):
        state = optimizer.state.get(p)
        if not state:
            continue
        step = state["step"]
        arrays[f"{idx}.step"] = (
            step.detach().cpu().numpy() if torch.is_tensor(step) else np.asarray(step)
        )
        arrays[f"{idx}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
        arrays[f"{idx}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
    return arrays


def arrays_to_optimizer(optimizer, params, arrays):
    """Restore Adam moments saved by optimizer_to_arrays."""
    for idx, p in enumerate(params):
        key = f"{idx}.exp_avg"
        if key not in arrays:
            continue
        step = arrays[f"{idx}.step"]
        optimizer.state[p] = {
            "step": torch.as_tensor(step.copy()),
            "exp_avg": torch.from_numpy(arrays[key].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"{idx}.exp_avg_sq"].copy()),
        }


def _amp_objects(cfg):
    device_type = "cuda" if cfg.device.startswith("cuda") else "cpu"
    use_amp = cfg.precision == "reduced"
    amp_dtype = torch.float16 if device_type == "cuda" else torch.bfloat16
    autocast_ctx = torch.autocast(device_type, dtype=amp_dtype, enabled=use_amp)
    scaler = torch.amp.GradScaler(device_type, enabled=use_amp and device_type == "cuda")
    return autocast_ctx, scaler


def train(
    cfg,
    sources,
    run_dir,
    manifest_overrides=None,
    resume=None,
    toggles=(True, True, True),
    progress=None,
):
    """Run (or resume) a training job; returns the final checkpoint path."""
    cfg.validate()
    if not sources:
        raise InvalidInputError("dataset is empty")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        bundle, opt_arrays = load_checkpoint(resume)
        start_iteration = int(bundle.manifest["iteration"])
        if start_iteration >= cfg.max_iterations:
            raise CheckpointError(
                f"checkpoint already at iteration {start_iteration} >= max {cfg.max_iterations}"
            )
        weights = LossWeights(**bundle.manifest["loss_weights"])
        coeffs = RetinexCoeffs(**bundle.manifest["retinex_coeffs"])
        cfg = replace(cfg, seed=int(bundle.manifest["seed"]))
    else:
        overrides = dict(manifest_overrides or {})
        overrides["loss_weights"] = cfg.loss_weights.as_dict()
        overrides["retinex_coeffs"] = cfg.retinex_coeffs.as_dict()
        overrides["lambda"] = cfg.illum_exponent
        bundle = build_bundle(overrides, seed=cfg.seed)
        opt_arrays = None
        start_iteration = 0
        weights = cfg.loss_weights
        coeffs = cfg.retinex_coeffs
    bundle.to(device=cfg.device)
    bundle.train()

    extractor = make_extractor(cfg.extractor) if weights.w3 > 0 else None
    if extractor is not None:
        extractor.to(cfg.device)

    params = list(bundle.parameters())
    optimizer = torch.optim.Adam(
        params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2)
    )
    if opt_arrays:
        arrays_to_optimizer(optimizer, params, opt_arrays)
    autocast_ctx, scaler = _amp_objects(cfg)

    cache = _ImageCache()
    log_path = run_dir / LOG_NAME
    write_header = not log_path.exists()
    final_ckpt = None
    with open(log_path, "a", newline="") as log_fh:
        writer = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS)
        if write_header:
            writer.writeheader()
        for iteration in range(start_iteration + 1, cfg.max_iterations + 1):
            batch = batch_for_iteration(sources, cfg, iteration, cache)
            if cfg.device != "cpu":
                batch = tuple(x.to(cfg.device) for x in batch)
            report = train_step(
                bundle, optimizer, batch, weights,
                coeffs=coeffs, extractor=extractor,
                grad_clip_norm=cfg.grad_clip_norm, toggles=toggles,
                scaler=scaler, autocast_ctx=autocast_ctx,
            )
            writer.writerow({"iteration": iteration, **report.as_row()})
            if progress is not None:
                progress(iteration, report)
            if iteration % cfg.checkpoint_every == 0 or iteration == cfg.max_iterations:
                bundle.manifest["iteration"] = iteration
                final_ckpt = save_checkpoint(
                    bundle,
                    run_dir / f"ckpt_{iteration:06d}",
                    optimizer_to_arrays(optimizer, params),
                )
                log_fh.flush()
    return final_ckpt
