"""Configuration schema, presets, and the INI config-file format.

A config file is an INI document with up to three sections. Every key is
optional; unknown sections or keys are errors.

[model]
    preset              toy | paper (fills the architecture defaults below)
    backbone            rcan | edsr
    channels            int, backbone feature width
    n_groups            int, residual groups in each backbone
    n_blocks_per_group  int, residual blocks per group
    ca_reduction        int, channel-attention squeeze ratio (divides channels)
    downscale_mode      learned | bicubic
    include_x1_path     bool, add the full-resolution branch
    scale_variant       multiscale | x1_x1_x1 | x1_x2_x1 | x1_x4_x1

[train]
    lr0                 float, initial learning rate
    beta1, beta2        Adam moment decays
    epsilon             Adam stability constant
    epochs              int, epochs per stage
    lr_halving_period   int, epochs between learning-rate halvings
    batch_size          int
    patch_size          int, square training patch side (divisible by 8)
    augment             comma list out of {random_crop, hflip, rot90}; empty disables
    seed                int, global seed
    ssim_window         int, SSIM window used by the training losses
    checkpoint_every    int, epochs between periodic checkpoints
    val_fraction        float in [0, 1), pairs held out to track the best checkpoint

[eval]
    save_montage        bool, write side-by-side comparison panels
    max_images          int, cap on evaluated pairs (0 = all)
"""

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    """Invalid configuration value, key, or file."""


BACKBONES = ("rcan", "edsr")
DOWNSCALE_MODES = ("learned", "bicubic")
SCALE_VARIANTS = ("multiscale", "x1_x1_x1", "x1_x2_x1", "x1_x4_x1")
PRESETS = ("toy", "paper")
AUGMENTATIONS = ("random_crop", "hflip", "rot90")


@dataclass(frozen=True)
class ModelConfig:
    """Full architecture description for build_variant."""

    backbone: str = "rcan"
    channels: int = 64
    n_groups: int = 10
    n_blocks_per_group: int = 20
    ca_reduction: int = 16
    downscale_mode: str = "learned"
    include_x1_path: bool = False
    scale_variant: str = "multiscale"
    preset: str = "paper"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.downscale_mode not in DOWNSCALE_MODES:
            raise ConfigError(f"downscale_mode must be one of {DOWNSCALE_MODES}, got {self.downscale_mode!r}")
        if self.scale_variant not in SCALE_VARIANTS:
            raise ConfigError(f"scale_variant must be one of {SCALE_VARIANTS}, got {self.scale_variant!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        for key in ("channels", "n_groups", "n_blocks_per_group", "ca_reduction"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be a positive integer, got {getattr(self, key)}")
        if self.channels % self.ca_reduction != 0:
            raise ConfigError(
                f"channels ({self.channels}) must be divisible by ca_reduction ({self.ca_reduction})"
            )

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def fingerprint(self):
        return config_fingerprint(self.to_dict())


# Architecture defaults per (preset, backbone). The full-size rcan depth is
# RCAN's standard 10x20x64 (about 31M parameters for the two-scale model);
# edsr uses its full 32-block 256-channel form, which is far larger.
_PRESET_FIELDS = {
    ("toy", "rcan"): dict(channels=16, n_groups=2, n_blocks_per_group=4, ca_reduction=16),
    ("toy", "edsr"): dict(channels=16, n_groups=2, n_blocks_per_group=4, ca_reduction=16),
    ("paper", "rcan"): dict(channels=64, n_groups=10, n_blocks_per_group=20, ca_reduction=16),
    ("paper", "edsr"): dict(channels=256, n_groups=1, n_blocks_per_group=32, ca_reduction=16),
}


def preset_config(preset, backbone="rcan", **overrides):
    """Build a ModelConfig from a named preset, with optional field overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")
    if backbone not in BACKBONES:
        raise ConfigError(f"backbone must be one of {BACKBONES}, got {backbone!r}")
    base = dict(_PRESET_FIELDS[(preset, backbone)])
    base.update(preset=preset, backbone=backbone)
    base.update(overrides)
    return ModelConfig(**base)


def ablation_row(row, preset="paper"):
    """ModelConfig for one ablation-study row (a-e) over the three design axes:
    backbone kind, down-scaling mode, and the optional x1 path."""
    rows = {
        "a": dict(backbone="edsr", downscale_mode="bicubic", include_x1_path=False),
        "b": dict(backbone="rcan", downscale_mode="bicubic", include_x1_path=False),
        "c": dict(backbone="rcan", downscale_mode="bicubic", include_x1_path=True),
        "d": dict(backbone="rcan", downscale_mode="learned", include_x1_path=False),
        "e": dict(backbone="rcan", downscale_mode="learned", include_x1_path=True),
    }
    if row not in rows:
        raise ConfigError(f"ablation row must be one of {sorted(rows)}, got {row!r}")
    spec = rows[row]
    return preset_config(preset, backbone=spec["backbone"],
                         downscale_mode=spec["downscale_mode"],
                         include_x1_path=spec["include_x1_path"])


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters and schedule."""

    lr0: float = 0.5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 1000
    lr_halving_period: int = 300
    batch_size: int = 8

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        for key in ("beta1", "beta2"):
            v = getattr(self, key)
            if not 0 < v < 1:
                raise ConfigError(f"{key} must be in (0, 1), got {v}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        for key in ("epochs", "lr_halving_period", "batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be a positive integer, got {getattr(self, key)}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings plus sampling/checkpoint plumbing for one run."""

    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    patch_size: int = 192
    augment: tuple = AUGMENTATIONS
    seed: int = 0
    ssim_window: int = 11
    checkpoint_every: int = 50
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.patch_size % 8 != 0:
            raise ConfigError(f"patch_size must be divisible by 8, got {self.patch_size}")
        for a in self.augment:
            if a not in AUGMENTATIONS:
                raise ConfigError(f"unknown augmentation {a!r}; valid: {AUGMENTATIONS}")
        if self.ssim_window < 2:
            raise ConfigError(f"ssim_window must be >= 2, got {self.ssim_window}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass(frozen=True)
class EvalConfig:
    save_montage: bool = False
    max_images: int = 0

    def __post_init__(self):
        if self.max_images < 0:
            raise ConfigError(f"max_images must be >= 0, got {self.max_images}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig


_MODEL_KEYS = {
    "preset": str, "backbone": str, "channels": int, "n_groups": int,
    "n_blocks_per_group": int, "ca_reduction": int, "downscale_mode": str,
    "include_x1_path": bool, "scale_variant": str,
}
_TRAIN_KEYS = {
    "lr0": float, "beta1": float, "beta2": float, "epsilon": float,
    "epochs": int, "lr_halving_period": int, "batch_size": int,
    "patch_size": int, "augment": str, "seed": int, "ssim_window": int,
    "checkpoint_every": int, "val_fraction": float,
}
_EVAL_KEYS = {"save_montage": bool, "max_images": int}
_OPTIMIZER_FIELDS = ("lr0", "beta1", "beta2", "epsilon", "epochs", "lr_halving_period", "batch_size")


def _parse_value(section, key, raw, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def _read_ini(text, path="<config>"):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def load_config(path=None, text=None, overrides=None):
    """Parse a config file into a RunConfig. `overrides` maps "section.key" -> value
    (already-typed or string) and takes precedence over file contents."""
    if text is None:
        if path is None:
            text = ""
        else:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
    parser = _read_ini(text, path=str(path) if path else "<config>")

    known = {"model": _MODEL_KEYS, "train": _TRAIN_KEYS, "eval": _EVAL_KEYS}
    values = {"model": {}, "train": {}, "eval": {}}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in known[section]:
                raise ConfigError(f"unknown config key [{section}] {key}")
            values[section][key] = _parse_value(section, key, raw, known[section][key])

    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in known or key not in known[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        if isinstance(value, str):
            value = _parse_value(section, key, value, known[section][key])
        values[section][key] = value

    model_kw = dict(values["model"])
    preset = model_kw.pop("preset", "paper")
    backbone = model_kw.pop("backbone", "rcan")
    model = preset_config(preset, backbone=backbone, **model_kw)

    train_kw = dict(values["train"])
    if "augment" in train_kw:
        raw = train_kw["augment"].strip()
        train_kw["augment"] = tuple(a.strip() for a in raw.split(",") if a.strip()) if raw else ()
    opt_kw = {k: train_kw.pop(k) for k in list(train_kw) if k in _OPTIMIZER_FIELDS}
    train = TrainConfig(optimizer=OptimizerConfig(**opt_kw), **train_kw)

    eval_cfg = EvalConfig(**values["eval"])
    return RunConfig(model=model, train=train, eval=eval_cfg)


def dump_config(cfg):
    """Render a RunConfig back to INI text (canonical key order)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["model"] = {k: str(getattr(cfg.model, k)) for k in _MODEL_KEYS}
    train_vals = {}
    for k in _TRAIN_KEYS:
        if k in _OPTIMIZER_FIELDS:
            train_vals[k] = str(getattr(cfg.train.optimizer, k))
        elif k == "augment":
            train_vals[k] = ",".join(cfg.train.augment)
        else:
            train_vals[k] = str(getattr(cfg.train, k))
    parser["train"] = train_vals
    parser["eval"] = {k: str(getattr(cfg.eval, k)) for k in _EVAL_KEYS}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_fingerprint(d):
    """Stable hex digest of a flat config dict (canonical key=value lines)."""
    lines = [f"{k}={d[k]}" for k in sorted(d)]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def toy_config(**overrides):
    return preset_config("toy", **overrides)


def paper_config(backbone="rcan", **overrides):
    return preset_config("paper", backbone=backbone, **overrides)


def with_variant(cfg, scale_variant):
    return replace(cfg, scale_variant=scale_variant)
