"""PSNR/SSIM evaluation, benchmark table emission, and the decomposition
diagnostic.

Conventions (pinned for reproducibility across runs of this artifact):
PSNR is computed on float RGB in [0,1] without 8-bit requantization, with the
MSE accumulated in float64; SSIM uses the default 11x11 Gaussian window and is
averaged over the RGB channels. Identical images report PSNR as +inf.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import SamplePairRef, save_png
from .losses import SsimParams, ssim
from .model import count_parameters

log = logging.getLogger(__name__)


def psnr(out, gt, max_val=1.0):
    """10 log10(max^2 / MSE) over all channels; +inf for identical inputs."""
    if out.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(out.shape)} vs {tuple(gt.shape)}")
    diff = out.double() - gt.double()
    mse = (diff * diff).mean().item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10((max_val * max_val) / mse)


def eval_ssim(out, gt):
    """SSIM with default parameters, averaged over space and RGB channels."""
    return float(ssim(out, gt, SsimParams()))


@dataclass
class ImageMetrics:
    image_id: str
    psnr_db: float
    ssim: float
    infer_time_s: float


@dataclass
class MetricsReport:
    per_image: list = field(default_factory=list)
    param_count: int = 0
    fingerprint: str = ""
    skipped: list = field(default_factory=list)

    @property
    def mean_psnr(self):
        return sum(m.psnr_db for m in self.per_image) / len(self.per_image)

    @property
    def mean_ssim(self):
        return sum(m.ssim for m in self.per_image) / len(self.per_image)

    @property
    def mean_time(self):
        return sum(m.infer_time_s for m in self.per_image) / len(self.per_image)


CSV_HEADER = "id,psnr_db,ssim,infer_time_s"


def _fmt(v):
    return "inf" if math.isinf(v) else f"{v:.9f}"


def write_report(report, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER]
    for m in report.per_image:
        lines.append(f"{m.image_id},{_fmt(m.psnr_db)},{_fmt(m.ssim)},{m.infer_time_s:.6f}")
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary = [
        f"images evaluated : {len(report.per_image)}",
        f"mean PSNR (dB)   : {_fmt(report.mean_psnr)}",
        f"mean SSIM        : {_fmt(report.mean_ssim)}",
        f"mean time (s)    : {report.mean_time:.6f}",
        f"parameters       : {report.param_count}",
        f"config           : {report.fingerprint}",
    ]
    if report.skipped:
        summary.append("skipped          : " + ", ".join(report.skipped))
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    return out_dir / "metrics.csv"


def benchmark(model, pairs, out_dir=None, max_images=0, montage=False):
    """Deblur every pair and report per-image plus aggregate PSNR/SSIM/time.

    Timing covers the full forward pass (pad, inference, crop) and excludes
    disk I/O. Unreadable pairs are skipped with a warning and flagged.
    """
    report = MetricsReport(
        param_count=count_parameters(model),
        fingerprint=model.cfg.fingerprint() if hasattr(model, "cfg") else "",
    )
    model.eval()
    done = 0
    for item in pairs:
        if max_images and done >= max_images:
            break
        try:
            pair = item.load() if isinstance(item, SamplePairRef) else item
        except Exception as exc:  # unreadable image: skip, flag, continue
            ident = getattr(item, "source_id", str(item))
            log.warning("skipping unreadable pair %s: %s", ident, exc)
            report.skipped.append(ident)
            continue
        with torch.no_grad():
            t0 = time.perf_counter()
            out = model.deblur(pair.blurred)
            elapsed = time.perf_counter() - t0
        report.per_image.append(
            ImageMetrics(
                image_id=pair.source_id or f"image{done:04d}",
                psnr_db=psnr(out, pair.sharp),
                ssim=eval_ssim(out, pair.sharp),
                infer_time_s=elapsed,
            )
        )
        if out_dir and montage:
            write_montage(Path(out_dir) / "montage" / f"{done:04d}.png",
                          [pair.blurred, out, pair.sharp])
        done += 1
    if not report.per_image:
        raise ValueError("no readable pairs to evaluate")
    if out_dir:
        write_report(report, out_dir)
    return report


def decompose(model, img, out_dir=None):
    """Fig-style decomposition: input, full output, output with the backbones
    bypassed, and output with the long residual skips removed."""
    model.eval()
    with torch.no_grad():
        full = model.deblur(img)
        no_backbone = model.deblur(img, backbone_mode="identity")
        no_rir = model.deblur(img, backbone_mode="no_skip")
    outputs = {"input": img, "full": full, "no_backbone": no_backbone, "no_rir": no_rir}
    if out_dir:
        out_dir = Path(out_dir)
        for name, image in outputs.items():
            save_png(out_dir / f"{name}.png", image)
    return outputs


def write_montage(path, images, gap=4):
    """Write a horizontal side-by-side panel of equally sized images."""
    if not images:
        raise ValueError("montage needs at least one image")
    h = images[0].shape[-2]
    parts = []
    for i, img in enumerate(images):
        if img.shape[-2] != h:
            raise ValueError("montage images must share height")
        if i:
            parts.append(torch.ones(1, 3, h, gap))
        parts.append(img.clamp(0, 1))
    save_png(path, torch.cat(parts, dim=-1))
    return path
