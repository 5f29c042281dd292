"""Run configuration: flat INI-style files plus command-line overrides.

Precedence is total and simple: built-in defaults < config file < explicit
flags. The effective configuration is written back into the run directory so
a run can be reproduced from its artifacts alone.
"""

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights, RetinexCoeffs
from .training import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _to_bool(text):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (section, key) -> converter; None values stay None
SCHEMA = {
    ("data", "dataset"): str,
    ("data", "output_dir"): str,
    ("data", "reference_dir"): str,
    ("train", "learning_rate"): float,
    ("train", "beta1"): float,
    ("train", "beta2"): float,
    ("train", "batch_size"): int,
    ("train", "max_iterations"): int,
    ("train", "image_size"): int,
    ("train", "seed"): int,
    ("train", "precision"): str,
    ("train", "checkpoint_every"): int,
    ("train", "grad_clip_norm"): float,
    ("train", "device"): str,
    ("train", "extractor"): str,
    ("loss", "w0"): float,
    ("loss", "w1"): float,
    ("loss", "w2"): float,
    ("loss", "w3"): float,
    ("loss", "reconstruction"): float,
    ("loss", "pseudo_reflectance"): float,
    ("loss", "smoothness"): float,
    ("loss", "gradient_reg"): float,
    ("model", "lambda"): float,
    ("model", "n_width"): int,
    ("model", "r_width"): int,
    ("model", "l_width"): int,
    ("model", "cg_width"): int,
    ("model", "ce_width"): int,
    ("model", "oec_width"): int,
    ("model", "attention_reduction"): int,
    ("ablation", "use_cg"): _to_bool,
    ("ablation", "use_ce"): _to_bool,
    ("ablation", "use_oec"): _to_bool,
    ("metrics", "niqe_params"): str,
}

_ARCH_KEYS = (
    "n_width", "r_width", "l_width", "cg_width", "ce_width", "oec_width",
    "attention_reduction",
)


@dataclass
class RunConfig:
    """Everything one command needs: training recipe, paths, module toggles."""

    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: Path | None = None
    output_dir: Path | None = None
    reference_dir: Path | None = None
    use_cg: bool = True
    use_ce: bool = True
    use_oec: bool = True
    arch: dict = field(default_factory=dict)
    niqe_params: Path | None = None

    @property
    def toggles(self):
        return (self.use_cg, self.use_ce, self.use_oec)

    def manifest_overrides(self):
        return {"arch": dict(self.arch)} if self.arch else {}


def read_raw_config(path):
    """Parse an INI file into {(section, key): raw string}, validating names."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    raw = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if (section, key) not in SCHEMA:
                raise ConfigError(f"{path}: unknown config field [{section}] {key}")
            raw[(section, key)] = value
    return raw


def apply_overrides(raw, overrides):
    """Overlay ``section.key=value`` strings; flags beat file values."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override key must be section.key: {target!r}")
        section, key = target.split(".", 1)
        if (section, key) not in SCHEMA:
            raise ConfigError(f"unknown override field [{section}] {key}")
        raw[(section, key)] = value
    return raw


def build_run_config(raw):
    """Convert raw strings into a typed RunConfig; diagnostics name the field."""
    typed = {}
    for (section, key), text in raw.items():
        converter = SCHEMA[(section, key)]
        try:
            typed[(section, key)] = converter(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {text!r} ({exc})") from exc

    def get(section, key, default):
        return typed.get((section, key), default)

    weights = LossWeights(
        w0=get("loss", "w0", 0.5),
        w1=get("loss", "w1", 1.0),
        w2=get("loss", "w2", 1.0),
        w3=get("loss", "w3", 0.1),
    )
    coeffs = RetinexCoeffs(
        reconstruction=get("loss", "reconstruction", 1.0),
        pseudo_reflectance=get("loss", "pseudo_reflectance", 0.5),
        smoothness=get("loss", "smoothness", 0.1),
        gradient_reg=get("loss", "gradient_reg", 0.01),
    )
    train = TrainConfig(
        learning_rate=get("train", "learning_rate", 1e-4),
        beta1=get("train", "beta1", 0.9),
        beta2=get("train", "beta2", 0.999),
        batch_size=get("train", "batch_size", 4),
        max_iterations=get("train", "max_iterations", 200_000),
        image_size=get("train", "image_size", 512),
        seed=get("train", "seed", 0),
        precision=get("train", "precision", "full"),
        checkpoint_every=get("train", "checkpoint_every", 1000),
        grad_clip_norm=get("train", "grad_clip_norm", 5.0),
        device=get("train", "device", "cpu"),
        extractor=get("train", "extractor", "builtin"),
        illum_exponent=get("model", "lambda", 0.2),
        loss_weights=weights,
        retinex_coeffs=coeffs,
    )
    arch = {
        k: typed[("model", k)] for k in _ARCH_KEYS if ("model", k) in typed
    }
    cfg = RunConfig(
        train=train,
        dataset=Path(typed[("data", "dataset")]) if ("data", "dataset") in typed else None,
        output_dir=Path(typed[("data", "output_dir")]) if ("data", "output_dir") in typed else None,
        reference_dir=(
            Path(typed[("data", "reference_dir")]) if ("data", "reference_dir") in typed else None
        ),
        use_cg=get("ablation", "use_cg", True),
        use_ce=get("ablation", "use_ce", True),
        use_oec=get("ablation", "use_oec", True),
        arch=arch,
        niqe_params=(
            Path(typed[("metrics", "niqe_params")]) if ("metrics", "niqe_params") in typed else None
        ),
    )
    try:
        cfg.train.validate()
    except Exception as exc:
        raise ConfigError(f"invalid training configuration: {exc}") from exc
    return cfg


def load_run_config(path=None, overrides=None):
    raw = read_raw_config(path) if path is not None else {}
    apply_overrides(raw, overrides)
    return build_run_config(raw)


def write_effective_config(cfg, path):
    """Serialize the effective configuration back to INI for reproducibility."""
    t = cfg.train
    parser = configparser.ConfigParser()
    parser["data"] = {}
    if cfg.dataset is not None:
        parser["data"]["dataset"] = str(cfg.dataset)
    if cfg.output_dir is not None:
        parser["data"]["output_dir"] = str(cfg.output_dir)
    if cfg.reference_dir is not None:
        parser["data"]["reference_dir"] = str(cfg.reference_dir)
    parser["train"] = {
        "learning_rate": repr(t.learning_rate),
        "beta1": repr(t.beta1),
        "beta2": repr(t.beta2),
        "batch_size": str(t.batch_size),
        "max_iterations": str(t.max_iterations),
        "image_size": str(t.image_size),
        "seed": str(t.seed),
        "precision": t.precision,
        "checkpoint_every": str(t.checkpoint_every),
        "grad_clip_norm": repr(t.grad_clip_norm),
        "device": t.device,
        "extractor": t.extractor,
    }
    w, c = t.loss_weights, t.retinex_coeffs
    parser["loss"] = {
        "w0": repr(w.w0), "w1": repr(w.w1), "w2": repr(w.w2), "w3": repr(w.w3),
        "reconstruction": repr(c.reconstruction),
        "pseudo_reflectance": repr(c.pseudo_reflectance),
        "smoothness": repr(c.smoothness),
        "gradient_reg": repr(c.gradient_reg),
    }
    parser["model"] = {"lambda": repr(t.illum_exponent)}
    for key in _ARCH_KEYS:
        if key in cfg.arch:
            parser["model"][key] = str(cfg.arch[key])
    parser["ablation"] = {
        "use_cg": str(cfg.use_cg).lower(),
        "use_ce": str(cfg.use_ce).lower(),
        "use_oec": str(cfg.use_oec).lower(),
    }
    if cfg.niqe_params is not None:
        parser["metrics"] = {"niqe_params": str(cfg.niqe_params)}
    with open(path, "w") as fh:
        parser.write(fh)
    return Path(path)
