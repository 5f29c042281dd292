"""Model bundle: the six networks plus a serializable manifest.

A checkpoint is a directory holding a human-readable ``manifest.json``
(architecture hyperparameters, illumination exponent, loss weights, iteration
count) and ``tensors.npz`` with the named raw parameter tensors; optimizer
moments live in ``optimizer.npz`` when training state is saved. Loading
rebuilds the networks from the manifest and fails closed on any mismatch.
"""

import copy
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .decomposition import IlluminationNet, ProjectionNet, ReflectanceNet, init_parameters
from .errors import CheckpointError
from .refinement import ChannelGuidance, ColorEnhancement, OverExposureCorrection

MANIFEST_NAME = "manifest.json"
TENSORS_NAME = "tensors.npz"
OPTIMIZER_NAME = "optimizer.npz"

DEFAULT_MANIFEST = {
    "format_version": 1,
    "arch": {
        "n_width": 64,
        "r_width": 64,
        "l_width": 64,
        "cg_width": 32,
        "ce_width": 16,
        "oec_width": 32,
        "attention_reduction": 8,
    },
    # exponent applied to L_f at recomposition; < 1 brightens
    "lambda": 0.2,
    # the Retinex reconstruction term uses the physical product (exponent 1)
    "train_recompose_lambda": 1.0,
    "loss_weights": {"w0": 0.5, "w1": 1.0, "w2": 1.0, "w3": 0.1},
    "retinex_coeffs": {
        "reconstruction": 1.0,
        "pseudo_reflectance": 0.5,
        "smoothness": 0.1,
        "gradient_reg": 0.01,
    },
    "iteration": 0,
    "seed": 0,
}


def make_manifest(overrides=None):
    """Default manifest with (possibly nested) overrides merged in."""
    manifest = copy.deepcopy(DEFAULT_MANIFEST)
    for key, value in (overrides or {}).items():
        if key not in manifest:
            raise CheckpointError(f"unknown manifest key: {key}")
        if isinstance(manifest[key], dict):
            if not isinstance(value, dict):
                raise CheckpointError(f"manifest key {key} expects a mapping")
            unknown = set(value) - set(manifest[key])
            if unknown:
                raise CheckpointError(f"unknown manifest keys under {key}: {sorted(unknown)}")
            manifest[key].update(value)
        else:
            manifest[key] = value
    return manifest


@dataclass
class ModelBundle:
    """The five decomposition/refinement networks plus OEC and their manifest."""

    n_net: ProjectionNet
    r_net: ReflectanceNet
    l_net: IlluminationNet
    cg: ChannelGuidance
    ce: ColorEnhancement
    oec: OverExposureCorrection
    manifest: dict

    def networks(self):
        return {
            "n_net": self.n_net,
            "r_net": self.r_net,
            "l_net": self.l_net,
            "cg": self.cg,
            "ce": self.ce,
            "oec": self.oec,
        }

    def parameters(self):
        for net in self.networks().values():
            yield from net.parameters()

    def named_parameters(self):
        for name, net in self.networks().items():
            for pname, p in net.named_parameters():
                yield f"{name}.{pname}", p

    def named_tensors(self):
        return {name: p.detach().cpu().numpy() for name, p in self.named_parameters()}

    def train(self, mode=True):
        for net in self.networks().values():
            net.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, dtype=None, device=None):
        for net in self.networks().values():
            net.to(dtype=dtype, device=device)
        return self

    def clone(self, dtype=None):
        """Deep copy, optionally cast (float64 copies are used for gradient checks)."""
        dup = copy.deepcopy(self)
        if dtype is not None:
            dup.to(dtype=dtype)
        return dup

    def all_finite(self):
        return all(torch.isfinite(p).all().item() for p in self.parameters())


def build_bundle(manifest_overrides=None, seed=None):
    """Construct freshly initialized networks from a manifest."""
    manifest = make_manifest(manifest_overrides)
    if seed is not None:
        manifest["seed"] = int(seed)
    arch = manifest["arch"]
    reduction = arch["attention_reduction"]
    bundle = ModelBundle(
        n_net=ProjectionNet(arch["n_width"]),
        r_net=ReflectanceNet(arch["r_width"]),
        l_net=IlluminationNet(arch["l_width"]),
        cg=ChannelGuidance(arch["cg_width"], reduction),
        ce=ColorEnhancement(arch["ce_width"], max(reduction // 2, 1)),
        oec=OverExposureCorrection(arch["oec_width"]),
        manifest=manifest,
    )
    gen = torch.Generator().manual_seed(int(manifest["seed"]) & 0x7FFFFFFF)
    for net in bundle.networks().values():
        init_parameters(net, gen)
    bundle.eval()
    return bundle


def save_checkpoint(bundle, directory, optimizer_arrays=None):
    """Write manifest + named tensors (and optimizer moments) into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MANIFEST_NAME, "w") as fh:
        json.dump(bundle.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.savez(directory / TENSORS_NAME, **bundle.named_tensors())
    if optimizer_arrays is not None:
        np.savez(directory / OPTIMIZER_NAME, **optimizer_arrays)
    return directory


def load_checkpoint(directory):
    """Rebuild a bundle from a checkpoint directory; fail closed on mismatch.

    Returns (bundle, optimizer_arrays_or_None).
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    tensors_path = directory / TENSORS_NAME
    if not manifest_path.is_file() or not tensors_path.is_file():
        raise CheckpointError(f"not a checkpoint directory: {directory}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest in {directory}: {exc}") from exc
    if manifest.get("format_version") != 1:
        raise CheckpointError(
            f"unsupported checkpoint format_version: {manifest.get('format_version')!r}"
        )
    overrides = {k: v for k, v in manifest.items() if k != "format_version"}
    bundle = build_bundle(overrides)
    bundle.manifest = make_manifest(overrides)
    try:
        with np.load(tensors_path) as data:
            arrays = {name: data[name] for name in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"unreadable tensors in {directory}: {exc}") from exc
    expected = dict(bundle.named_parameters())
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise CheckpointError(
            f"tensor names do not match architecture (missing={missing}, extra={extra})"
        )
    with torch.no_grad():
        for name, param in expected.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(param.shape):
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arr.shape} vs model {tuple(param.shape)}"
                )
            param.copy_(torch.from_numpy(arr))
    if not bundle.all_finite():
        raise CheckpointError(f"non-finite parameters in {directory}")
    optimizer_arrays = None
    opt_path = directory / OPTIMIZER_NAME
    if opt_path.is_file():
        try:
            with np.load(opt_path) as data:
                optimizer_arrays = {name: data[name] for name in data.files}
        except (OSError, ValueError, zipfile.BadZipFile) as exc:
            raise CheckpointError(f"unreadable optimizer state in {directory}: {exc}") from exc
    bundle.eval()
    return bundle, optimizer_arrays
