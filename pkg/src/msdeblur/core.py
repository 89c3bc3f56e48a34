"""Shared tensor conventions and geometry utilities.

All images and feature maps are 4-D torch tensors laid out as
(batch, channels, height, width). Images are float tensors with values
nominally in [0, 1]; feature maps are unbounded.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F


def require_image(t, channels=3, name="image"):
    """Validate an image tensor: rank 4, floating, expected channel count."""
    if not isinstance(t, torch.Tensor):
        raise ValueError(f"{name} must be a torch.Tensor, got {type(t).__name__}")
    if t.dim() != 4:
        raise ValueError(f"{name} must be 4-D (batch, channels, height, width), got shape {tuple(t.shape)}")
    if t.shape[0] < 1:
        raise ValueError(f"{name} batch dimension must be >= 1")
    if channels is not None and t.shape[1] != channels:
        raise ValueError(f"{name} must have {channels} channels, got {t.shape[1]}")
    if not t.is_floating_point():
        raise ValueError(f"{name} must be floating point, got dtype {t.dtype}")
    return t


def require_features(t, channels, name="features"):
    """Validate a feature tensor: rank 4 with the configured channel width."""
    return require_image(t, channels=channels, name=name)


@dataclass(frozen=True)
class PadRecord:
    """Bookkeeping for pad_to_multiple so padding can be inverted exactly."""

    original_h: int
    original_w: int
    pad_bottom: int
    pad_right: int


def pad_to_multiple(img, m):
    """Edge-replicate pad on the bottom/right so both spatial dims divide m.

    Returns the padded tensor and a PadRecord for crop_back.
    """
    require_image(img, channels=None)
    if m < 1:
        raise ValueError(f"multiple must be >= 1, got {m}")
    h, w = img.shape[-2], img.shape[-1]
    pad_b = (-h) % m
    pad_r = (-w) % m
    if pad_b == 0 and pad_r == 0:
        return img, PadRecord(h, w, 0, 0)
    out = F.pad(img, (0, pad_r, 0, pad_b), mode="replicate")
    return out, PadRecord(h, w, pad_b, pad_r)


def crop_back(img, rec):
    """Invert pad_to_multiple: crop to the recorded original size."""
    require_image(img, channels=None)
    h, w = img.shape[-2], img.shape[-1]
    if h < rec.original_h or w < rec.original_w:
        raise ValueError(
            f"cannot crop {h}x{w} back to {rec.original_h}x{rec.original_w}: image smaller than record"
        )
    return img[..., : rec.original_h, : rec.original_w]


def clamp_image(img):
    """Clamp values into the image range [0, 1]."""
    return img.clamp(0.0, 1.0)
