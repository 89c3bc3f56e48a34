"""Dataset ingestion, patch sampling with paired augmentation, coarse ground
truth generation, and a synthetic blur generator for desk-scale experiments.

Directory layout (GoPro style):

    <root>/<sequence>/blur/<frame>.png
    <root>/<sequence>/sharp/<frame>.png

Blurred/sharp files pair by identical filename; orphans are warned about and
excluded. PNGs are 8-bit and decode to float via v / 255.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .core import clamp_image, require_image
from .downscale import bicubic_downsample

log = logging.getLogger(__name__)


def load_png(path):
    """Read an 8-bit PNG into a (1,3,H,W) float32 tensor in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def save_png(path, img):
    """Write a (1,3,H,W) or (3,H,W) tensor in [0,1] as an 8-bit PNG."""
    t = img.detach()
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    arr = (t.clamp(0, 1) * 255.0).round().to(torch.uint8).permute(1, 2, 0).numpy()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def quantize(img):
    """Round to the 8-bit grid (the value a PNG round-trip would produce)."""
    return (img.clamp(0, 1) * 255.0).round() / 255.0


@dataclass
class SamplePair:
    """A blurred/sharp image pair; both (1,3,H,W) in [0,1]."""

    blurred: torch.Tensor
    sharp: torch.Tensor
    source_id: str = ""
    sequence: str = ""

    def __post_init__(self):
        require_image(self.blurred, name="blurred")
        require_image(self.sharp, name="sharp")
        if self.blurred.shape != self.sharp.shape:
            raise ValueError(
                f"blurred {tuple(self.blurred.shape)} and sharp {tuple(self.sharp.shape)} differ"
            )


@dataclass(frozen=True)
class SamplePairRef:
    """Lazily loadable reference to a pair on disk."""

    blur_path: Path
    sharp_path: Path
    source_id: str
    sequence: str

    def load(self):
        return SamplePair(
            blurred=load_png(self.blur_path),
            sharp=load_png(self.sharp_path),
            source_id=self.source_id,
            sequence=self.sequence,
        )


def scan_dataset(root):
    """Collect blurred/sharp pairs under a GoPro-style tree.

    Returns refs in deterministic lexicographic (sequence, frame) order.
    Orphan files on either side are logged as warnings and excluded.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    refs = []
    for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        blur_dir = seq_dir / "blur"
        sharp_dir = seq_dir / "sharp"
        blur = {p.name: p for p in blur_dir.glob("*.png")} if blur_dir.is_dir() else {}
        sharp = {p.name: p for p in sharp_dir.glob("*.png")} if sharp_dir.is_dir() else {}
        for name in sorted(blur.keys() | sharp.keys()):
            if name not in sharp:
                log.warning("orphan blur file excluded: %s", blur[name])
                continue
            if name not in blur:
                log.warning("orphan sharp file excluded: %s", sharp[name])
                continue
            refs.append(
                SamplePairRef(
                    blur_path=blur[name],
                    sharp_path=sharp[name],
                    source_id=f"{seq_dir.name}/{name}",
                    sequence=seq_dir.name,
                )
            )
    log.info("scanned %s: %d pairs", root, len(refs))
    return refs


@dataclass(frozen=True)
class PatchSpec:
    """Training patch geometry: full-res input patch plus its x2-scale size."""

    size_stage1: int = 192
    size_stage2: int = 96
    augment: tuple = ("random_crop", "hflip", "rot90")

    def __post_init__(self):
        for size in (self.size_stage1, self.size_stage2):
            if size % 8 != 0:
                raise ValueError(f"patch sizes must be divisible by 8, got {size}")


def sample_patch(pair, spec, rng_seed):
    """Crop and augment one training patch, identically on both images.

    Augmentations: random crop position (else top-left), horizontal flip, and
    a random multiple of 90-degree rotation. Reproducible from rng_seed.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    size = spec.size_stage1
    h, w = pair.blurred.shape[-2], pair.blurred.shape[-1]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")

    if "random_crop" in spec.augment:
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
    else:
        top, left = 0, 0
    blur = pair.blurred[..., top : top + size, left : left + size]
    sharp = pair.sharp[..., top : top + size, left : left + size]

    if "hflip" in spec.augment and rng.integers(0, 2) == 1:
        blur = torch.flip(blur, dims=[-1])
        sharp = torch.flip(sharp, dims=[-1])
    if "rot90" in spec.augment:
        k = int(rng.integers(0, 4))
        if k:
            blur = torch.rot90(blur, k, dims=(-2, -1))
            sharp = torch.rot90(sharp, k, dims=(-2, -1))
    return blur.contiguous(), sharp.contiguous()


@dataclass
class BlurKernel:
    """A normalized 2-D blur kernel plus additive-noise level."""

    kernel: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2:
            raise ValueError(f"kernel must be 2-D, got shape {k.shape}")
        if (k < 0).any():
            raise ValueError("kernel must be nonnegative")
        if abs(k.sum() - 1.0) > 1e-6:
            raise ValueError(f"kernel must sum to 1 (got {k.sum():.8f})")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        self.kernel = k


def named_kernel(name):
    """Preset kernels for the synthetic generator."""
    if name == "delta":
        k = np.zeros((3, 3))
        k[1, 1] = 1.0
        return k
    if name == "box3":
        return np.full((3, 3), 1.0 / 9.0)
    if name == "box5":
        return np.full((5, 5), 1.0 / 25.0)
    if name == "gauss5":
        x = np.arange(5) - 2.0
        g = np.exp(-(x**2) / (2 * 1.2**2))
        k = np.outer(g, g)
        return k / k.sum()
    if name == "motion_h":
        k = np.zeros((5, 5))
        k[2, :] = 1.0 / 5.0
        return k
    if name == "motion_v":
        k = np.zeros((5, 5))
        k[:, 2] = 1.0 / 5.0
        return k
    raise ValueError(f"unknown kernel {name!r}")


KERNEL_NAMES = ("delta", "box3", "box5", "gauss5", "motion_h", "motion_v", "nonuniform")

# 2x2 grid of kernels for the non-uniform toy generator.
NONUNIFORM_CELLS = ("box3", "motion_h", "motion_v", "box5")


def _conv_replicate(img, kernel):
    """Correlate each channel with a 2-D kernel under edge replication."""
    kh, kw = kernel.shape
    if kh > img.shape[-2] or kw > img.shape[-1]:
        raise ValueError(f"kernel {kh}x{kw} larger than image {img.shape[-2]}x{img.shape[-1]}")
    c = img.shape[1]
    weight = torch.as_tensor(kernel, dtype=img.dtype).expand(c, 1, kh, kw)
    padded = F.pad(img, (kw // 2, (kw - 1) // 2, kh // 2, (kh - 1) // 2), mode="replicate")
    return F.conv2d(padded, weight, groups=c)


def synth_blur(sharp, blur_kernel, rng_seed=0):
    """Blur a sharp image with one kernel plus Gaussian noise, clamped to [0,1]."""
    require_image(sharp, name="sharp")
    blurred = _conv_replicate(sharp, blur_kernel.kernel)
    if blur_kernel.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(rng_seed))
        noise = rng.normal(0.0, blur_kernel.noise_sigma, size=tuple(blurred.shape))
        blurred = blurred + torch.as_tensor(noise, dtype=blurred.dtype)
    return SamplePair(blurred=clamp_image(blurred), sharp=sharp)


def feather_masks(h, w, band=8, dtype=torch.float32):
    """Four 2x2-grid blending masks with a feathered seam; they sum to 1."""
    def ramp(n):
        # 0 -> 1 across the seam over `band` pixels
        x = torch.arange(n, dtype=torch.float64)
        return ((x - (n / 2 - 0.5)) / max(band, 1) + 0.5).clamp(0.0, 1.0)

    wx = ramp(w).view(1, 1, 1, w)
    wy = ramp(h).view(1, 1, h, 1)
    tl = (1 - wy) * (1 - wx)
    tr = (1 - wy) * wx
    bl = wy * (1 - wx)
    br = wy * wx
    return [m.to(dtype) for m in (tl, tr, bl, br)]


def synth_blur_nonuniform(sharp, kernels, noise_sigma=0.0, rng_seed=0, band=8):
    """Spatially varying blur: one kernel per 2x2 grid cell, feather-blended."""
    require_image(sharp, name="sharp")
    if len(kernels) != 4:
        raise ValueError(f"need exactly 4 kernels for the 2x2 grid, got {len(kernels)}")
    h, w = sharp.shape[-2], sharp.shape[-1]
    masks = feather_masks(h, w, band=band, dtype=sharp.dtype)
    blurred = torch.zeros_like(sharp)
    for kernel, mask in zip(kernels, masks):
        blurred = blurred + mask * _conv_replicate(sharp, np.asarray(kernel, dtype=np.float64))
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(rng_seed))
        noise = rng.normal(0.0, noise_sigma, size=tuple(blurred.shape))
        blurred = blurred + torch.as_tensor(noise, dtype=blurred.dtype)
    return SamplePair(blurred=clamp_image(blurred), sharp=sharp)


def make_coarse_gt(sharp):
    """x2 bicubic down-sampled target for the coarse stage."""
    return bicubic_downsample(sharp, 2)


def render_sharp_image(size, rng):
    """Procedural sharp test image: smooth gradient plus hard-edged shapes."""
    h = w = size
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = np.zeros((3, h, w), dtype=np.float32)
    base = rng.uniform(0.1, 0.9, size=3)
    tilt = rng.uniform(-0.4, 0.4, size=(3, 2))
    for c in range(3):
        img[c] = base[c] + tilt[c, 0] * (yy - 0.5) + tilt[c, 1] * (xx - 0.5)
    for _ in range(int(rng.integers(4, 9))):
        color = rng.uniform(0, 1, size=3).astype(np.float32)
        kind = rng.integers(0, 3)
        if kind == 0:  # rectangle
            y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
            y1 = rng.integers(y0 + 2, min(h, y0 + h // 2) + 1)
            x1 = rng.integers(x0 + 2, min(w, x0 + w // 2) + 1)
            img[:, y0:y1, x0:x1] = color[:, None, None]
        elif kind == 1:  # disc
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(size / 16, size / 4)
            mask = (yy * (h - 1) - cy) ** 2 + (xx * (w - 1) - cx) ** 2 <= r * r
            img[:, mask] = color[:, None]
        else:  # stripe
            t = int(rng.integers(1, max(2, size // 16)))
            pos = int(rng.integers(0, h - t))
            if rng.integers(0, 2):
                img[:, pos : pos + t, :] = color[:, None, None]
            else:
                img[:, :, pos : pos + t] = color[:, None, None]
    img = np.clip(img, 0.0, 1.0)
    return torch.from_numpy(img).unsqueeze(0)


def generate_synthetic_dataset(out_dir, n_pairs, kernel="box3", sigma=0.01, seed=0,
                               size=64, sequence="seq_000"):
    """Write a GoPro-layout synthetic dataset plus a manifest; deterministic per seed.

    Sharp images are quantized to the 8-bit grid before blurring so the saved
    files reproduce the forward model exactly.
    """
    out_dir = Path(out_dir)
    if kernel != "nonuniform" and kernel not in KERNEL_NAMES:
        raise ValueError(f"unknown kernel {kernel!r}; valid: {KERNEL_NAMES}")
    manifest_lines = ["sequence,frame,kernel,sigma,seed"]
    for i in range(n_pairs):
        pair_seed = np.random.SeedSequence([seed, i]).generate_state(1)[0]
        rng = np.random.Generator(np.random.PCG64(pair_seed))
        sharp = quantize(render_sharp_image(size, rng))
        noise_seed = int(rng.integers(0, 2**31 - 1))
        if kernel == "nonuniform":
            cells = [named_kernel(n) for n in NONUNIFORM_CELLS]
            pair = synth_blur_nonuniform(sharp, cells, noise_sigma=sigma, rng_seed=noise_seed)
        else:
            pair = synth_blur(sharp, BlurKernel(named_kernel(kernel), noise_sigma=sigma),
                              rng_seed=noise_seed)
        frame = f"{i:06d}.png"
        save_png(out_dir / sequence / "sharp" / frame, pair.sharp)
        save_png(out_dir / sequence / "blur" / frame, pair.blurred)
        manifest_lines.append(f"{sequence},{frame},{kernel},{sigma},{noise_seed}")
    manifest = out_dir / "manifest.csv"
    manifest.parent.mkdir(parents=True, exist_ok=True)
    manifest.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    log.info("wrote %d synthetic pairs to %s", n_pairs, out_dir)
    return out_dir
