"""Model assembly: coarse and fine subnetworks, the two-scale deblurring
network, single-scale variants, and the optional full-resolution branch.

The coarse subnetwork maps (B,3,H,W) -> (B,3,H/2,W/2); the fine subnetwork
consumes the input image plus the coarse image estimate and restores full
resolution. There is no network processing the original-scale image unless
include_x1_path is set. All image outputs are clamped to [0,1].
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import Backbone, ImageHead, Upscaler, conv3x3
from .config import ModelConfig
from .core import clamp_image, crop_back, pad_to_multiple, require_image
from .downscale import BicubicDown1, BicubicDown2, DownScale1, DownScale2


class CoarseNet(nn.Module):
    """Bottom subnetwork: x4 down-scale, backbone, x2 up-scale to a half-res image."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        if cfg.downscale_mode == "learned":
            self.downscale = DownScale1(c)
        else:
            self.downscale = BicubicDown1(c, factor=4)
        self.backbone = Backbone(c, cfg.n_groups, cfg.n_blocks_per_group, cfg.backbone, cfg.ca_reduction)
        self.upscale = Upscaler(c, 2)
        self.to_image = ImageHead(c)

    def forward(self, img, backbone_mode="full"):
        f = self.downscale(img)
        y = self.backbone(f, mode=backbone_mode)
        return clamp_image(self.to_image(self.upscale(y)))


class FineNet(nn.Module):
    """Top subnetwork: x2 down-scale fused with the coarse image estimate,
    backbone, x2 up-scale back to full resolution."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        if cfg.downscale_mode == "learned":
            self.downscale = DownScale2(c)
        else:
            self.downscale = BicubicDown2(c)
        self.backbone = Backbone(c, cfg.n_groups, cfg.n_blocks_per_group, cfg.backbone, cfg.ca_reduction)
        self.upscale = Upscaler(c, 2)
        self.to_image = ImageHead(c)

    def forward(self, img, coarse_out, backbone_mode="full"):
        f = self.downscale(img, coarse_out)
        y = self.backbone(f, mode=backbone_mode)
        return clamp_image(self.to_image(self.upscale(y)))


class X1Fuse(nn.Module):
    """Full-resolution fusion mirroring DownScale2 with stride-1 convs."""

    def __init__(self, channels, mode="learned", in_channels=3, fused_channels=3):
        super().__init__()
        self.mode = mode
        if mode == "learned":
            self.conv1 = conv3x3(in_channels, channels)
            self.conv2 = conv3x3(channels + fused_channels, channels)
        else:
            self.fuse = conv3x3(in_channels + fused_channels, channels)

    def forward(self, img, fine_out):
        if fine_out.shape[-2:] != img.shape[-2:]:
            raise ValueError(
                f"fine output {tuple(fine_out.shape[-2:])} does not match input {tuple(img.shape[-2:])}"
            )
        if self.mode == "learned":
            f = F.relu(torch.cat([self.conv1(img), fine_out], dim=1))
            return self.conv2(f)
        return self.fuse(torch.cat([img, fine_out], dim=1))


class X1Net(nn.Module):
    """Optional original-resolution branch refining the fine output."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.fuse = X1Fuse(c, mode=cfg.downscale_mode)
        self.backbone = Backbone(c, cfg.n_groups, cfg.n_blocks_per_group, cfg.backbone, cfg.ca_reduction)
        self.to_image = ImageHead(c)

    def forward(self, img, fine_out, backbone_mode="full"):
        f = self.fuse(img, fine_out)
        y = self.backbone(f, mode=backbone_mode)
        return clamp_image(self.to_image(y))


class DeblurModel(nn.Module):
    """Two-scale coarse-to-fine deblurring network (plus optional x1 branch)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.scale_variant != "multiscale":
            raise ValueError(f"DeblurModel requires scale_variant=multiscale, got {cfg.scale_variant!r}")
        self.cfg = cfg
        self.coarse = CoarseNet(cfg)
        self.fine = FineNet(cfg)
        self.x1 = X1Net(cfg) if cfg.include_x1_path else None

    def coarse_forward(self, img):
        """Half-resolution intermediate estimate; caller pads to a multiple of 4."""
        require_image(img)
        return self.coarse(img)

    def forward(self, img, backbone_mode="full"):
        """Returns (intermediate half-res image, final full-res image).

        Any input size is accepted: the input is edge-pad/cropped internally.
        The intermediate estimate is reported at half the padded size.
        """
        require_image(img)
        padded, rec = pad_to_multiple(img, 4)
        coarse_out = self.coarse(padded, backbone_mode=backbone_mode)
        out = self.fine(padded, coarse_out, backbone_mode=backbone_mode)
        if self.x1 is not None:
            out = self.x1(padded, out, backbone_mode=backbone_mode)
        return coarse_out, crop_back(out, rec)

    def deblur(self, img, backbone_mode="full"):
        return self.forward(img, backbone_mode=backbone_mode)[1]


_VARIANT_STRIDES = {"x1_x1_x1": (1, 1), "x1_x2_x1": (2, 1), "x1_x4_x1": (2, 2)}


class SingleScaleModel(nn.Module):
    """x1 -> xk -> x1 variant: the coarse subnetwork modified to emit an
    original-size image (strides lowered and/or up-scaling adjusted)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.scale_variant not in _VARIANT_STRIDES:
            raise ValueError(f"unknown single-scale variant {cfg.scale_variant!r}")
        c = cfg.channels
        strides = _VARIANT_STRIDES[cfg.scale_variant]
        self.factor = strides[0] * strides[1]
        self.cfg = cfg
        if cfg.downscale_mode == "learned":
            self.downscale = DownScale1(c, strides=strides)
        else:
            self.downscale = BicubicDown1(c, factor=self.factor)
        self.backbone = Backbone(c, cfg.n_groups, cfg.n_blocks_per_group, cfg.backbone, cfg.ca_reduction)
        self.upscale = Upscaler(c, self.factor) if self.factor > 1 else None
        self.to_image = ImageHead(c)

    def forward(self, img, backbone_mode="full"):
        require_image(img)
        padded, rec = pad_to_multiple(img, self.factor)
        f = self.downscale(padded)
        y = self.backbone(f, mode=backbone_mode)
        if self.upscale is not None:
            y = self.upscale(y)
        out = clamp_image(self.to_image(y))
        return crop_back(out, rec)

    def deblur(self, img, backbone_mode="full"):
        return self.forward(img, backbone_mode=backbone_mode)


def build_variant(cfg: ModelConfig):
    """Construct the model described by a ModelConfig.

    include_x1_path is ignored for single-scale variants.
    """
    if cfg.scale_variant == "multiscale":
        return DeblurModel(cfg)
    return SingleScaleModel(cfg)


def count_parameters(model):
    """Number of scalar learnable values."""
    return sum(p.numel() for p in model.parameters())


def freeze_coarse(model: DeblurModel):
    """Disable gradients for every coarse-subnetwork parameter."""
    for p in model.coarse.parameters():
        p.requires_grad_(False)
    return model
