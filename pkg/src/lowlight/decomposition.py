"""Decomposition networks: normalized projection, reflectance, illumination.

The stack follows the classical Retinex split I = L o R. A projection net
first stabilizes the raw input into i; a reflectance net and an illumination
net then decompose i into a 3-channel R and a 1-channel L. All heads are
sigmoid-bounded, spatial size is preserved throughout (stride 1, no
normalization layers), and replicate padding keeps constant inputs constant.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ShapeError


def conv3x3(c_in, c_out, kernel_size=3, dilation=1):
    pad = dilation * (kernel_size // 2)
    return nn.Conv2d(
        c_in, c_out, kernel_size,
        stride=1, padding=pad, dilation=dilation, padding_mode="replicate",
    )


def expect_channels(x, channels, who):
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(
            f"{who}: expected (B,{channels},H,W) input, got {tuple(x.shape)}"
        )


def init_parameters(module, generator):
    """Kaiming fan-in init for conv/linear weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (
                m.weight.shape[2] * m.weight.shape[3] if m.weight.ndim == 4 else 1
            )
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


class ProjectionNet(nn.Module):
    """Produces the normalized projection i from the raw 3-channel input."""

    def __init__(self, width=64):
        super().__init__()
        self.body = nn.Sequential(
            conv3x3(3, width), nn.ReLU(inplace=True),
            conv3x3(width, width), nn.ReLU(inplace=True),
            conv3x3(width, 3),
        )

    def forward(self, x):
        expect_channels(x, 3, "ProjectionNet")
        return torch.sigmoid(self.body(x))


class ReflectanceNet(nn.Module):
    """Maps the projection i to the 3-channel reflectance R."""

    def __init__(self, width=64):
        super().__init__()
        self.body = nn.Sequential(
            conv3x3(3, width), nn.ReLU(inplace=True),
            conv3x3(width, width), nn.ReLU(inplace=True),
            conv3x3(width, width), nn.ReLU(inplace=True),
            conv3x3(width, 3),
        )

    def forward(self, x):
        expect_channels(x, 3, "ReflectanceNet")
        return torch.sigmoid(self.body(x))


class IlluminationNet(nn.Module):
    """Maps the projection i to the single-channel illumination L."""

    def __init__(self, width=64):
        super().__init__()
        self.body = nn.Sequential(
            conv3x3(3, width), nn.ReLU(inplace=True),
            conv3x3(width, width), nn.ReLU(inplace=True),
            conv3x3(width, width), nn.ReLU(inplace=True),
            conv3x3(width, 1),
        )

    def forward(self, x):
        expect_channels(x, 3, "IlluminationNet")
        return torch.sigmoid(self.body(x))


@dataclass
class DecompositionResult:
    """Outputs of the decomposition stack for one image, as numpy arrays."""

    projection: np.ndarray
    reflectance: np.ndarray
    illumination: np.ndarray


def to_batch(img, dtype=torch.float32):
    """(C,H,W) numpy image -> (1,C,H,W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(img)).to(dtype).unsqueeze(0)


def from_batch(t):
    """(1,C,H,W) tensor -> (C,H,W) float32 numpy image."""
    return t.detach().squeeze(0).cpu().numpy().astype(np.float32)


def decompose(bundle, img):
    """Run projection -> reflectance/illumination on one (3,H,W) image."""
    with torch.no_grad():
        x = to_batch(img)
        i = bundle.n_net(x)
        r = bundle.r_net(i)
        l = bundle.l_net(i)
    return DecompositionResult(
        projection=from_batch(i),
        reflectance=from_batch(r),
        illumination=from_batch(l),
    )
