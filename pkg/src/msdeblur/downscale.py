"""Down-scaling: learned strided-conv modules and the fixed bicubic baseline.

The learned modules reduce spatial dimension with 3x3 stride-2 convolutions
while carrying 64 feature channels, replacing fixed-kernel down-sampling. The
bicubic resampler (Keys kernel a = -0.5, antialias prefilter scaled by the
factor, edge-replicated boundary) is the fixed baseline and also generates the
half-resolution ground truth for the coarse stage.
"""

from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import require_image


def _cubic(x):
    # Keys bicubic kernel with a = -0.5.
    ax = abs(float(x))
    if ax <= 1.0:
        return 1.5 * ax**3 - 2.5 * ax**2 + 1.0
    if ax < 2.0:
        return -0.5 * ax**3 + 2.5 * ax**2 - 4.0 * ax + 2.0
    return 0.0


@lru_cache(maxsize=64)
def _bicubic_matrix(n_in, factor):
    """(n_out, n_in) float64 row-stochastic resampling matrix for one axis.

    Output sample i is centered at (i + 0.5) * factor - 0.5 in input
    coordinates; the kernel support is stretched by the factor (antialias) and
    out-of-range taps are folded onto the clamped edge index (replication).
    """
    n_out = n_in // factor
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    support = 2.0 * factor
    for i in range(n_out):
        center = (i + 0.5) * factor - 0.5
        lo = int(np.floor(center - support)) + 1
        hi = int(np.ceil(center + support)) - 1
        taps = np.arange(lo, hi + 1)
        w = np.array([_cubic((center - j) / factor) for j in taps])
        w = w / w.sum()
        for j, wj in zip(taps, w):
            mat[i, min(max(j, 0), n_in - 1)] += wj
    return mat


def bicubic_downsample(img, factor):
    """Antialiased bicubic down-sampling by an integer factor in {2, 4}."""
    require_image(img, channels=None)
    if factor not in (2, 4):
        raise ValueError(f"factor must be 2 or 4, got {factor}")
    h, w = img.shape[-2], img.shape[-1]
    if h % factor != 0 or w % factor != 0:
        raise ValueError(f"spatial dims {h}x{w} not divisible by factor {factor}")
    wh = torch.as_tensor(_bicubic_matrix(h, factor), dtype=img.dtype, device=img.device)
    ww = torch.as_tensor(_bicubic_matrix(w, factor), dtype=img.dtype, device=img.device)
    # separable: rows then columns
    out = torch.matmul(wh, img)
    out = torch.matmul(out, ww.transpose(0, 1))
    return out


class DownScale1(nn.Module):
    """x4 down-scaling: conv(stride 2) -> ReLU -> conv(stride 2), 64 channels.

    The single-scale x1->xk->x1 variants reuse this head with strides
    lowered to 1.
    """

    def __init__(self, channels=64, in_channels=3, strides=(2, 2)):
        super().__init__()
        self.strides = tuple(strides)
        self.conv1 = nn.Conv2d(in_channels, channels, 3, stride=self.strides[0], padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, stride=self.strides[1], padding=1)

    @property
    def factor(self):
        return self.strides[0] * self.strides[1]

    def forward(self, x):
        require_image(x, channels=self.conv1.in_channels)
        f = self.factor
        if x.shape[-2] % f != 0 or x.shape[-1] % f != 0:
            raise ValueError(
                f"input {x.shape[-2]}x{x.shape[-1]} not divisible by the stride product {f}"
            )
        return self.conv2(F.relu(self.conv1(x)))


class DownScale2(nn.Module):
    """x2 down-scaling fused with the lower-scale output image:
    conv(stride 2) -> concat -> ReLU -> conv(stride 1).
    """

    def __init__(self, channels=64, in_channels=3, fused_channels=3):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, channels, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(channels + fused_channels, channels, 3, stride=1, padding=1)

    def forward(self, img, coarse_out):
        require_image(img, channels=self.conv1.in_channels)
        if img.shape[-2] % 2 != 0 or img.shape[-1] % 2 != 0:
            raise ValueError(f"input {img.shape[-2]}x{img.shape[-1]} not divisible by 2")
        if coarse_out.shape[-2] * 2 != img.shape[-2] or coarse_out.shape[-1] * 2 != img.shape[-1]:
            raise ValueError(
                f"coarse output {coarse_out.shape[-2]}x{coarse_out.shape[-1]} is not half of "
                f"input {img.shape[-2]}x{img.shape[-1]}"
            )
        f = self.conv1(img)
        f = F.relu(torch.cat([f, coarse_out], dim=1))
        return self.conv2(f)


class BicubicDown1(nn.Module):
    """Fixed-kernel analog of DownScale1: bicubic x4 plus a 3->C channel lift."""

    def __init__(self, channels=64, in_channels=3, factor=4):
        super().__init__()
        self.factor = factor
        self.lift = nn.Conv2d(in_channels, channels, 3, padding=1)

    def forward(self, x):
        require_image(x, channels=self.lift.in_channels)
        y = bicubic_downsample(x, self.factor) if self.factor > 1 else x
        return self.lift(y)


class BicubicDown2(nn.Module):
    """Fixed-kernel analog of DownScale2: bicubic x2, concat, fusion conv."""

    def __init__(self, channels=64, in_channels=3, fused_channels=3):
        super().__init__()
        self.fuse = nn.Conv2d(in_channels + fused_channels, channels, 3, padding=1)
        self.in_channels = in_channels

    def forward(self, img, coarse_out):
        require_image(img, channels=self.in_channels)
        if coarse_out.shape[-2] * 2 != img.shape[-2] or coarse_out.shape[-1] * 2 != img.shape[-1]:
            raise ValueError(
                f"coarse output {coarse_out.shape[-2]}x{coarse_out.shape[-1]} is not half of "
                f"input {img.shape[-2]}x{img.shape[-1]}"
            )
        y = bicubic_downsample(img, 2)
        return self.fuse(torch.cat([y, coarse_out], dim=1))
