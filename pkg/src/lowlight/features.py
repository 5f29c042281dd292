"""Pluggable deep feature extractors for the perceptual loss and metric.

Any callable that maps a (B,3,H,W) tensor to a list of feature tensors can
serve. The default is a frozen, seeded convolutional pyramid: it needs no
download, is deterministic, and keeps feature distances meaningful (zero iff
features equal, growing with distortion). A pretrained VGG16 backbone is
available when torchvision and its cached weights are present; the cache
location honors the ``LLIE_CACHE`` environment variable.
"""

import os

import torch
import torch.nn as nn

from .errors import DependencyError

CACHE_ENV_VAR = "LLIE_CACHE"


class ConvFeatureExtractor(nn.Module):
    """Frozen random-weight conv pyramid with smooth activations.

    Three stride-2 stages tapped after each activation. Weights are drawn
    from a fixed seed and never trained, so the feature distance is a stable
    measuring stick rather than a moving target.
    """

    name = "builtin"

    def __init__(self, widths=(16, 32, 64), seed=0x10E, dtype=torch.float32):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        stages = []
        c_in = 3
        for w in widths:
            conv = nn.Conv2d(c_in, w, 3, stride=2, padding=1)
            with torch.no_grad():
                fan_in = c_in * 9
                conv.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                conv.bias.zero_()
            stages.append(conv)
            c_in = w
        self.stages = nn.ModuleList(stages)
        self.act = nn.Softplus()
        self.to(dtype)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        for conv in self.stages:
            x = self.act(conv(x))
            feats.append(x)
        return feats


class VggFeatureExtractor(nn.Module):
    """Mid-layer taps of an ImageNet-pretrained VGG16 (optional dependency)."""

    name = "vgg16"
    # features indices just after relu2_2 and relu3_3
    _TAPS = (9, 16)
    _MEAN = (0.485, 0.456, 0.406)
    _STD = (0.229, 0.224, 0.225)

    def __init__(self, dtype=torch.float32):
        super().__init__()
        cache = os.environ.get(CACHE_ENV_VAR)
        if cache:
            os.environ.setdefault("TORCH_HOME", cache)
        try:
            from torchvision.models import VGG16_Weights, vgg16
        except ImportError as exc:
            raise DependencyError(
                "torchvision is not installed; install the 'vgg' extra or use the builtin extractor"
            ) from exc
        try:
            backbone = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        except Exception as exc:  # weight download/read failure
            raise DependencyError(f"could not load VGG16 weights: {exc}") from exc
        self.slices = nn.ModuleList()
        prev = 0
        for tap in self._TAPS:
            self.slices.append(nn.Sequential(*[backbone[i] for i in range(prev, tap)]))
            prev = tap
        self.to(dtype)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        mean = x.new_tensor(self._MEAN)[None, :, None, None]
        std = x.new_tensor(self._STD)[None, :, None, None]
        x = (x - mean) / std
        feats = []
        for sl in self.slices:
            x = sl(x)
            feats.append(x)
        return feats


def make_extractor(name, dtype=torch.float32):
    """Build an extractor by name: 'builtin', 'vgg16', or 'none' (None)."""
    if name in (None, "none", ""):
        return None
    if name == "builtin":
        return ConvFeatureExtractor(dtype=dtype)
    if name == "vgg16":
        return VggFeatureExtractor(dtype=dtype)
    raise DependencyError(f"unknown feature extractor: {name!r}")
