"""Refinement modules and recomposition.

Channel-Guidance gates a residual refinement of the reflectance through fused
channel and spatial attention. Color Enhancement reworks the illumination map
with multi-scale convolutions modulated by global statistics. Over-Exposure
Correction repairs saturated regions with dilated gated residual blocks and
blends the corrected branch back through a learned mask, so forcing the mask
to zero recovers the input exactly.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .decomposition import conv3x3, expect_channels, from_batch, to_batch
from .errors import InvalidInputError, ShapeError

ILLUMINATION_EPS = 1e-4
SATURATION_LUMA_THRESHOLD = 0.95
_LUMA = (0.2126, 0.7152, 0.0722)  # Rec.709


class ChannelGuidance(nn.Module):
    """Dual-attention residual refinement of the reflectance map."""

    def __init__(self, width=32, reduction=8):
        super().__init__()
        hidden = max(width // reduction, 1)
        self.feat = nn.Sequential(conv3x3(3, width), nn.ReLU(inplace=True))
        self.channel_mlp = nn.Sequential(
            nn.Linear(width, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, width)
        )
        self.spatial_conv = conv3x3(2, 1, kernel_size=7)
        self.refine_body = nn.Sequential(conv3x3(width, width), nn.ReLU(inplace=True))
        self.refine_out = conv3x3(width, 3)

    def channel_attention(self, feats):
        # global average pooling -> MLP -> sigmoid, one weight per channel
        stats = feats.mean(dim=(2, 3))
        return torch.sigmoid(self.channel_mlp(stats))[:, :, None, None]

    def spatial_attention(self, feats):
        pooled = torch.cat(
            [feats.mean(dim=1, keepdim=True), feats.amax(dim=1, keepdim=True)], dim=1
        )
        return torch.sigmoid(self.spatial_conv(pooled))

    def forward(self, r):
        expect_channels(r, 3, "ChannelGuidance")
        feats = self.feat(r)
        gated = feats * self.channel_attention(feats) * self.spatial_attention(feats)
        residual = self.refine_out(self.refine_body(gated))
        return torch.clamp(r + residual, 0.0, 1.0)


class ColorEnhancement(nn.Module):
    """Multi-scale illumination refinement driven by global statistics."""

    def __init__(self, width=16, reduction=4):
        super().__init__()
        self.scales = nn.ModuleList(
            [conv3x3(1, width, kernel_size=k) for k in (3, 5, 7)]
        )
        total = 3 * width
        hidden = max(total // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Linear(total, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, total)
        )
        self.fuse = conv3x3(total, 1)

    def correction_weights(self, feats):
        # global adaptive pooling -> MLP -> sigmoid, content-aware per channel
        return torch.sigmoid(self.mlp(feats.mean(dim=(2, 3))))

    def forward(self, l):
        expect_channels(l, 1, "ColorEnhancement")
        feats = torch.cat([torch.relu(conv(l)) for conv in self.scales], dim=1)
        weights = self.correction_weights(feats)
        return torch.sigmoid(self.fuse(feats * weights[:, :, None, None]))


def tensor_luma(img):
    w = img.new_tensor(_LUMA)[None, :, None, None]
    return (img * w).sum(dim=1, keepdim=True)


def saturation_prior(img, threshold=SATURATION_LUMA_THRESHOLD):
    """Binary map of saturated pixels (luma above threshold)."""
    return (tensor_luma(img) > threshold).to(img.dtype)


class GatedResidualBlock(nn.Module):
    """Dilated residual block whose update is gated by exposure cues."""

    def __init__(self, width, dilation):
        super().__init__()
        self.body = nn.Sequential(
            conv3x3(width, width, dilation=dilation),
            nn.ReLU(inplace=True),
            conv3x3(width, width, dilation=dilation),
        )
        self.gate = conv3x3(width + 1, width)

    def forward(self, x, prior):
        h = self.body(x)
        g = torch.sigmoid(self.gate(torch.cat([h, prior], dim=1)))
        return x + g * h


class OverExposureCorrection(nn.Module):
    """Saturation repair with a learned blending mask."""

    def __init__(self, width=32):
        super().__init__()
        self.inp = conv3x3(4, width)
        self.blocks = nn.ModuleList(
            [GatedResidualBlock(width, d) for d in (1, 2, 4)]
        )
        self.correct_head = conv3x3(width, 3)
        self.mask_head = conv3x3(width, 1)

    def forward(self, img, mask_override=None):
        expect_channels(img, 3, "OverExposureCorrection")
        prior = saturation_prior(img)
        x = torch.relu(self.inp(torch.cat([img, prior], dim=1)))
        for block in self.blocks:
            x = block(x, prior)
        corrected = torch.sigmoid(self.correct_head(x))
        mask = torch.sigmoid(self.mask_head(x))
        if mask_override is not None:
            mask = torch.as_tensor(mask_override, dtype=img.dtype).expand_as(mask)
        out = mask * corrected + (1.0 - mask) * img
        return out, mask


def recompose(r_f, l_f, illum_exponent):
    """I_f = L_f**exponent broadcast over RGB, times R_f.

    The illumination is clamped away from zero before exponentiation so the
    power and any downstream ratios stay well conditioned. Exponents below 1
    brighten.
    """
    if illum_exponent <= 0:
        raise InvalidInputError(f"illumination exponent must be > 0, got {illum_exponent}")
    if r_f.shape[-3] != 3 or l_f.shape[-3] != 1 or r_f.shape[-2:] != l_f.shape[-2:]:
        raise ShapeError(
            f"recompose expects (...,3,H,W) and (...,1,H,W), got {tuple(r_f.shape)} / {tuple(l_f.shape)}"
        )
    l = l_f.clamp(ILLUMINATION_EPS, 1.0)
    return (l ** illum_exponent) * r_f


@dataclass
class RefinedPair:
    """Refined reflectance/illumination for one image, as numpy arrays."""

    reflectance_f: np.ndarray
    illumination_f: np.ndarray


@dataclass
class EnhancedImage:
    """Final enhanced image plus the OEC blending mask."""

    image: np.ndarray
    blend_mask: np.ndarray


@dataclass
class PipelineTensors:
    """Every intermediate of one forward pass (torch tensors, batched)."""

    projection: torch.Tensor
    reflectance: torch.Tensor
    illumination: torch.Tensor
    reflectance_f: torch.Tensor
    illumination_f: torch.Tensor
    recomposed: torch.Tensor
    enhanced: torch.Tensor
    blend_mask: torch.Tensor


def run_pipeline(
    bundle,
    x,
    use_cg=True,
    use_ce=True,
    use_oec=True,
    illum_exponent=None,
    oec_mask_override=None,
):
    """Full forward pass in the fixed order decompose -> CG -> CE -> recompose -> OEC.

    Disabled modules are replaced by identity pass-through, which is also the
    ablation semantics of the CLI harness.
    """
    i = bundle.n_net(x)
    r = bundle.r_net(i)
    l = bundle.l_net(i)
    r_f = bundle.cg(r) if use_cg else r
    l_f = bundle.ce(l) if use_ce else l
    exponent = illum_exponent if illum_exponent is not None else bundle.manifest["lambda"]
    recomposed = recompose(r_f, l_f, exponent)
    if use_oec:
        enhanced, mask = bundle.oec(recomposed, mask_override=oec_mask_override)
    else:
        enhanced, mask = recomposed, torch.zeros_like(l_f)
    return PipelineTensors(
        projection=i,
        reflectance=r,
        illumination=l,
        reflectance_f=r_f,
        illumination_f=l_f,
        recomposed=recomposed,
        enhanced=enhanced,
        blend_mask=mask,
    )


def enhance(bundle, img, use_cg=True, use_ce=True, use_oec=True):
    """Enhance one (3,H,W) image; deterministic for fixed weights."""
    with torch.no_grad():
        arts = run_pipeline(
            bundle, to_batch(img), use_cg=use_cg, use_ce=use_ce, use_oec=use_oec
        )
    return EnhancedImage(
        image=np.clip(from_batch(arts.enhanced), 0.0, 1.0),
        blend_mask=from_batch(arts.blend_mask),
    )
