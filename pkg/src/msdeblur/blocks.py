"""Backbone building blocks: channel attention, RCAB, residual groups, the
residual-in-residual backbone, the plain EDSR residual block, and pixel-shuffle
up-scaling.

No batch normalization anywhere. All backbone convs are 3x3 stride 1 padding 1;
channel-attention convs are 1x1. Zero-weight networks are exact identities
through every residual path.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def conv3x3(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)


class ChannelAttention(nn.Module):
    """Per-channel gate in (0,1): global average pool -> squeeze -> ReLU ->
    excite -> sigmoid, multiplied back onto the features."""

    def __init__(self, channels, reduction=16):
        super().__init__()
        if channels % reduction != 0:
            raise ValueError(f"channels ({channels}) must be divisible by reduction ({reduction})")
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1)
        self.excite = nn.Conv2d(channels // reduction, channels, 1)

    def gate(self, f):
        w = f.mean(dim=(-2, -1), keepdim=True)
        w = self.excite(F.relu(self.squeeze(w)))
        return torch.sigmoid(w)

    def forward(self, f):
        if f.shape[1] != self.squeeze.in_channels:
            raise ValueError(f"expected {self.squeeze.in_channels} channels, got {f.shape[1]}")
        return f * self.gate(f)


class RCAB(nn.Module):
    """Residual channel attention block: f + CA(conv -> ReLU -> conv)."""

    def __init__(self, channels, reduction=16):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        self.attention = ChannelAttention(channels, reduction)

    def forward(self, f):
        if f.shape[1] != self.conv1.in_channels:
            raise ValueError(f"expected {self.conv1.in_channels} channels, got {f.shape[1]}")
        res = self.conv2(F.relu(self.conv1(f)))
        return f + self.attention(res)


class EDSRBlock(nn.Module):
    """Plain residual block: f + conv -> ReLU -> conv (no attention gate)."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)

    def forward(self, f):
        if f.shape[1] != self.conv1.in_channels:
            raise ValueError(f"expected {self.conv1.in_channels} channels, got {f.shape[1]}")
        return f + self.conv2(F.relu(self.conv1(f)))


def make_block(kind, channels, reduction=16):
    if kind == "rcan":
        return RCAB(channels, reduction)
    if kind == "edsr":
        return EDSRBlock(channels)
    raise ValueError(f"unknown block kind {kind!r}")


class ResidualGroup(nn.Module):
    """Blocks followed by a tail conv, wrapped by a short skip connection."""

    def __init__(self, channels, n_blocks, kind="rcan", reduction=16):
        super().__init__()
        self.blocks = nn.ModuleList(make_block(kind, channels, reduction) for _ in range(n_blocks))
        self.tail = conv3x3(channels, channels)

    def forward(self, x):
        y = x
        for blk in self.blocks:
            y = blk(y)
        return x + self.tail(y)


class Backbone(nn.Module):
    """Residual-in-residual stack: head conv, residual groups, tail conv, with
    a long skip connection adding the backbone input to the tail output.

    forward modes (used by the decomposition diagnostic):
      "full"     - normal operation
      "identity" - bypass the backbone entirely
      "no_skip"  - run the conv stack without the long skip add
    """

    def __init__(self, channels, n_groups, n_blocks_per_group, kind="rcan", reduction=16):
        super().__init__()
        self.head = conv3x3(channels, channels)
        self.groups = nn.ModuleList(
            ResidualGroup(channels, n_blocks_per_group, kind, reduction) for _ in range(n_groups)
        )
        self.tail = conv3x3(channels, channels)

    def forward(self, f, mode="full"):
        if mode == "identity":
            return f
        if f.shape[1] != self.head.in_channels:
            raise ValueError(f"expected {self.head.in_channels} channels, got {f.shape[1]}")
        y = self.head(f)
        for group in self.groups:
            y = group(y)
        y = self.tail(y)
        if mode == "no_skip":
            return y
        if mode != "full":
            raise ValueError(f"unknown backbone mode {mode!r}")
        return f + y


def pixel_shuffle(f, factor):
    """Channel-to-space rearrangement: (B, C*factor^2, h, w) -> (B, C, h*f, w*f)."""
    if f.shape[1] % (factor * factor) != 0:
        raise ValueError(f"channels ({f.shape[1]}) not divisible by factor^2 ({factor * factor})")
    return F.pixel_shuffle(f, factor)


class Upscaler(nn.Module):
    """Pixel-shuffle up-scaling: each x2 stage is conv(C -> 4C) + shuffle.
    Factor 4 chains two x2 stages. Output stays at C feature channels."""

    def __init__(self, channels, factor=2):
        super().__init__()
        if factor not in (2, 4):
            raise ValueError(f"factor must be 2 or 4, got {factor}")
        self.factor = factor
        self.convs = nn.ModuleList(
            conv3x3(channels, 4 * channels) for _ in range(factor // 2)
        )

    def forward(self, f):
        for conv in self.convs:
            f = pixel_shuffle(conv(f), 2)
        return f


class ImageHead(nn.Module):
    """Final 3-channel conv producing an image estimate from features.

    Bias starts at 0.5 so clamped outputs begin mid-range instead of half-dead.
    """

    def __init__(self, channels, out_channels=3):
        super().__init__()
        self.conv = conv3x3(channels, out_channels)
        nn.init.constant_(self.conv.bias, 0.5)

    def forward(self, f):
        return self.conv(f)
