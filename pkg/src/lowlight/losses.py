"""The four-term self-supervised objective.

Every pixel term is a mean-squared error. The Retinex term bundles four
sub-constraints: reconstruction of the normalized projection from the refined
product, a pseudo-reflectance anchor built from the ratio i / stopgrad(L_f),
total-variation smoothness of the illumination, and a squared illumination
gradient penalty. The weighted total is what training optimizes.
"""

import math
from dataclasses import dataclass, field

import torch

from .errors import DependencyError, InvalidInputError, ShapeError
from .refinement import ILLUMINATION_EPS

RETINEX_TERMS = ("reconstruction", "pseudo_reflectance", "smoothness", "gradient_reg")


@dataclass(frozen=True)
class LossWeights:
    """Outer weights of the total objective."""

    w0: float = 0.5   # projection
    w1: float = 1.0   # cross-exposure consistency
    w2: float = 1.0   # Retinex
    w3: float = 0.1   # perceptual

    def validate(self):
        vals = (self.w0, self.w1, self.w2, self.w3)
        if any(not math.isfinite(v) or v < 0.0 for v in vals):
            raise InvalidInputError(f"loss weights must be finite and >= 0: {vals}")
        if not any(v > 0 for v in vals):
            raise InvalidInputError("at least one loss weight must be positive")
        return self

    def as_dict(self):
        return {"w0": self.w0, "w1": self.w1, "w2": self.w2, "w3": self.w3}


@dataclass(frozen=True)
class RetinexCoeffs:
    """Internal coefficients of the Retinex sub-terms."""

    reconstruction: float = 1.0
    pseudo_reflectance: float = 0.5
    smoothness: float = 0.1
    gradient_reg: float = 0.01

    def as_dict(self):
        return {t: getattr(self, t) for t in RETINEX_TERMS}


@dataclass
class LossReport:
    """Scalar values of every term for one step, plus the weighted total."""

    projection: float
    consistency: float
    retinex: float
    perceptual: float
    total: float
    retinex_breakdown: dict = field(default_factory=dict)

    CSV_FIELDS = (
        "projection", "consistency", "retinex", "perceptual",
        "reconstruction", "pseudo_reflectance", "smoothness", "gradient_reg",
        "total",
    )

    def as_row(self):
        row = {
            "projection": self.projection,
            "consistency": self.consistency,
            "retinex": self.retinex,
            "perceptual": self.perceptual,
            "total": self.total,
        }
        row.update(self.retinex_breakdown)
        return row


def _same_shape(a, b, who):
    if a.shape != b.shape:
        raise ShapeError(f"{who}: shapes differ {tuple(a.shape)} vs {tuple(b.shape)}")


def projection_loss(i, img):
    """Mean squared deviation of the projection from the raw input."""
    _same_shape(i, img, "projection_loss")
    return ((i - img) ** 2).mean()


def consistency_loss(r_f1, r_f2):
    """Mean squared difference between the two refined reflectances."""
    _same_shape(r_f1, r_f2, "consistency_loss")
    return ((r_f1 - r_f2) ** 2).mean()


def tv_mean(x):
    """Total variation as the mean absolute forward difference per axis."""
    gx = x[..., :, 1:] - x[..., :, :-1]
    gy = x[..., 1:, :] - x[..., :-1, :]
    return gx.abs().mean() + gy.abs().mean()


def gradient_sq_mean(x):
    """Mean squared forward-difference gradient magnitude."""
    gx = x[..., :, 1:] - x[..., :, :-1]
    gy = x[..., 1:, :] - x[..., :-1, :]
    return (gx ** 2).mean() + (gy ** 2).mean()


def retinex_loss(r, l, i, coeffs=RetinexCoeffs(), frozen_ratio_illumination=None):
    """Weighted Retinex objective; returns (scalar, per-sub-term dict).

    ``r`` and ``l`` are the refined reflectance/illumination, ``i`` the
    normalized projection they must recompose. The pseudo-reflectance target
    divides by a stop-gradient copy of ``l``; pass
    ``frozen_ratio_illumination`` to pin that denominator to fixed values
    (used by finite-difference gradient checks, which must respect the same
    stop-gradient semantics the optimizer sees).
    """
    if r.shape[-3] != i.shape[-3] or r.shape[-2:] != i.shape[-2:] or l.shape[-2:] != i.shape[-2:]:
        raise ShapeError(
            f"retinex_loss: incompatible shapes r={tuple(r.shape)} l={tuple(l.shape)} i={tuple(i.shape)}"
        )
    reconstruction = ((l * r - i) ** 2).mean()
    denom = frozen_ratio_illumination if frozen_ratio_illumination is not None else l.detach()
    denom = denom.clamp(ILLUMINATION_EPS, 1.0)
    pseudo = ((r - i / denom) ** 2).mean()
    smoothness = tv_mean(l)
    gradient_reg = gradient_sq_mean(l)
    breakdown = {
        "reconstruction": reconstruction,
        "pseudo_reflectance": pseudo,
        "smoothness": smoothness,
        "gradient_reg": gradient_reg,
    }
    total = (
        coeffs.reconstruction * reconstruction
        + coeffs.pseudo_reflectance * pseudo
        + coeffs.smoothness * smoothness
        + coeffs.gradient_reg * gradient_reg
    )
    return total, breakdown


def perceptual_loss(extractor, a, b):
    """Mean squared distance between deep features of two images."""
    if extractor is None:
        raise DependencyError("perceptual loss requested but no feature extractor is loaded")
    _same_shape(a, b, "perceptual_loss")
    feats_a = extractor(a)
    feats_b = extractor(b)
    terms = [((fa - fb) ** 2).mean() for fa, fb in zip(feats_a, feats_b)]
    return sum(terms) / len(terms)


def total_loss(
    weights,
    inputs,
    artifacts,
    extractor=None,
    coeffs=RetinexCoeffs(),
    frozen_ratio_illuminations=None,
):
    """Weighted objective over both pair members.

    ``inputs`` is the (x_a, x_b) tensor pair and ``artifacts`` the matching
    PipelineTensors pair from the same forward pass. Per-member terms
    (projection, Retinex, perceptual) are averaged across members; consistency
    compares the two refined reflectances. Returns (total tensor, LossReport).
    """
    weights.validate()
    x_pair = tuple(inputs)
    art_pair = tuple(artifacts)
    frozen = frozen_ratio_illuminations or (None, None)

    proj_terms = [projection_loss(art.projection, x) for art, x in zip(art_pair, x_pair)]
    projection = sum(proj_terms) / 2

    consistency = consistency_loss(art_pair[0].reflectance_f, art_pair[1].reflectance_f)

    retinex_vals = []
    breakdown_sums = dict.fromkeys(RETINEX_TERMS, 0.0)
    for art, fr in zip(art_pair, frozen):
        value, breakdown = retinex_loss(
            art.reflectance_f, art.illumination_f, art.projection,
            coeffs=coeffs, frozen_ratio_illumination=fr,
        )
        retinex_vals.append(value)
        for term in RETINEX_TERMS:
            breakdown_sums[term] = breakdown_sums[term] + breakdown[term]
    retinex = sum(retinex_vals) / 2

    if weights.w3 > 0:
        perc_terms = [
            perceptual_loss(extractor, art.enhanced, art.projection) for art in art_pair
        ]
        perceptual = sum(perc_terms) / 2
    else:
        perceptual = torch.zeros((), dtype=x_pair[0].dtype, device=x_pair[0].device)

    total = (
        weights.w0 * projection
        + weights.w1 * consistency
        + weights.w2 * retinex
        + weights.w3 * perceptual
    )
    report = LossReport(
        projection=float(projection.detach()),
        consistency=float(consistency.detach()),
        retinex=float(retinex.detach()),
        perceptual=float(perceptual.detach()),
        total=float(total.detach()),
        retinex_breakdown={
            t: float(v.detach()) / 2 if torch.is_tensor(v) else float(v) / 2
            for t, v in breakdown_sums.items()
        },
    )
    return total, report
