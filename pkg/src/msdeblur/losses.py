"""Mix loss: weighted L1 + multi-scale SSIM, and the coarse-stage sub-loss.

The multi-scale term builds a three-level pyramid with 2x average pooling and
compares windowed SSIM at each level. The same three pyramid weights are used
for the full-resolution loss and the half-resolution sub-loss, each anchored
at its own native resolution.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 0.22
    lambda_ss: float = 0.78
    pyramid: tuple = (0.448, 0.353, 0.199)

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_ss < 0 or self.lambda_l1 + self.lambda_ss == 0:
            raise ValueError("lambda weights must be nonnegative and not both zero")
        if len(self.pyramid) != 3 or any(w <= 0 for w in self.pyramid):
            raise ValueError(f"pyramid must be exactly three positive weights, got {self.pyramid}")


@dataclass(frozen=True)
class SsimParams:
    """Gaussian-window SSIM parameters. Window defaults to 11x11, sigma 1.5."""

    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def gaussian_window(size, sigma, dtype=torch.float32, device=None):
    """Normalized 2-D Gaussian window (sums to 1)."""
    center = (size - 1) / 2.0
    coords = torch.arange(size, dtype=torch.float64, device=device) - center
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    win = torch.outer(g, g)
    win = win / win.sum()
    return win.to(dtype)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() != 4:
        raise ValueError(f"expected 4-D tensors, got shape {tuple(a.shape)}")


def l1_loss(out, gt):
    """Mean absolute difference over all elements."""
    _check_same_shape(out, gt)
    return (out - gt).abs().mean()


def ssim(a, b, params=SsimParams()):
    """Windowed SSIM averaged over space and channels (valid windows only)."""
    _check_same_shape(a, b)
    n = params.window_size
    h, w = a.shape[-2], a.shape[-1]
    if h < n or w < n:
        raise ValueError(f"image {h}x{w} is smaller than the {n}x{n} SSIM window")

    c = a.shape[1]
    win = gaussian_window(n, params.sigma, dtype=a.dtype, device=a.device)
    weight = win.expand(c, 1, n, n)

    def wmean(x):
        return F.conv2d(x, weight, groups=c)

    mu_a = wmean(a)
    mu_b = wmean(b)
    var_a = wmean(a * a) - mu_a * mu_a
    var_b = wmean(b * b) - mu_b * mu_b
    cov = wmean(a * b) - mu_a * mu_b

    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def msssim_loss(out, gt, weights=LossWeights(), params=SsimParams()):
    """1 - weighted SSIM over a three-level average-pooling pyramid."""
    _check_same_shape(out, gt)
    h, w = out.shape[-2], out.shape[-1]
    if h % 4 != 0 or w % 4 != 0:
        raise ValueError(f"spatial dims must be divisible by 4 for the pyramid, got {h}x{w}")

    total = 0.0
    a, b = out, gt
    for level, wm in enumerate(weights.pyramid):
        if level > 0:
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
        if min(a.shape[-2], a.shape[-1]) < params.window_size:
            raise ValueError(
                f"pyramid level {level} is {a.shape[-2]}x{a.shape[-1]}, smaller than the "
                f"{params.window_size}x{params.window_size} SSIM window"
            )
        total = total + wm * ssim(a, b, params)
    return 1.0 - total


def mix_loss(out, gt, weights=LossWeights(), params=SsimParams()):
    """Weighted sum of the L1 term and the multi-scale SSIM term.

    Zero-weighted terms are skipped, so a (1, 0) override is exactly L1.
    """
    total = out.new_zeros(())
    if weights.lambda_l1 != 0:
        total = total + weights.lambda_l1 * l1_loss(out, gt)
    if weights.lambda_ss != 0:
        total = total + weights.lambda_ss * msssim_loss(out, gt, weights, params)
    return total


def sub_loss(coarse_out, gt_x2, weights=LossWeights(), params=SsimParams()):
    """Coarse-stage loss: the same mix applied at the half-resolution scale.

    gt_x2 is the x2 bicubic down-sampled ground truth.
    """
    return mix_loss(coarse_out, gt_x2, weights, params)
