"""Command-line entry points.

Commands: synth-data, train, eval, ablate, count-params. Exit codes: 0 on
success, 1 for usage/config errors, 2 for runtime failures. Flags override
config-file keys (use --set section.key=value for any documented key). Every
command writes a run manifest (config snapshot, seed, content hashes of its
inputs) under its output directory.
"""

import argparse
import hashlib
import json
import logging
import re
import sys
import traceback
from pathlib import Path

from .checkpoint import CheckpointError, checkpoint_config, load_checkpoint, load_model_state
from .config import (ConfigError, ModelConfig, dump_config, load_config)
from .data import KERNEL_NAMES, generate_synthetic_dataset, scan_dataset
from .evaluate import benchmark
from .model import build_variant, count_parameters
from .train import train_stage1, train_stage2

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _hash_bytes(data):
    return hashlib.sha256(data).hexdigest()


def _hash_file(path):
    return _hash_bytes(Path(path).read_bytes())


def _hash_tree(root):
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode("utf-8"))
            h.update(bytes.fromhex(_hash_file(p)))
    return h.hexdigest()


def _write_manifest(out_dir, command, seed, config_text=None, inputs=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": seed,
        "config": config_text,
        "input_hashes": inputs or {},
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _overrides(args):
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = str(args.epochs)
    if getattr(args, "batch_size", None) is not None:
        overrides["train.batch_size"] = str(args.batch_size)
    return overrides


def _load_pairs(data_dir):
    refs = scan_dataset(data_dir)
    if not refs:
        raise ConfigError(f"no pairs found under {data_dir}")
    return [ref.load() for ref in refs]


def cmd_synth_data(args):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    generate_synthetic_dataset(out, args.n_pairs, kernel=args.kernel, sigma=args.sigma,
                               seed=args.seed, size=args.size)
    _write_manifest(out, "synth-data", args.seed,
                    inputs={"kernel": args.kernel, "sigma": args.sigma,
                            "n_pairs": args.n_pairs, "size": args.size})
    print(f"wrote {args.n_pairs} pairs to {out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, overrides=_overrides(args))
    out = Path(args.out)
    inputs = {"data": _hash_tree(args.data)}
    if args.config:
        inputs["config_file"] = _hash_file(args.config)
    _write_manifest(out, f"train-stage{args.stage}", cfg.train.seed,
                    config_text=dump_config(cfg), inputs=inputs)
    pairs = _load_pairs(args.data)
    if args.stage == 1:
        _, state, final = train_stage1(cfg.model, cfg.train, pairs, out,
                                       resume_from=args.resume)
    else:
        if not args.stage1_ckpt:
            raise ConfigError("--stage 2 requires --stage1-ckpt")
        _, state, final = train_stage2(cfg.model, cfg.train, pairs, args.stage1_ckpt, out,
                                       resume_from=args.resume, debug_freeze=args.debug_freeze)
    print(f"stage {args.stage} done: {state.epoch} epochs, {state.step} steps -> {final}")
    return 0


def _model_from_checkpoint(ckpt_path):
    meta, blocks = load_checkpoint(ckpt_path)
    cfg = ModelConfig(**checkpoint_config(blocks))
    if meta["stage"] != 2:
        raise ConfigError(
            f"{ckpt_path} is a stage-{meta['stage']} checkpoint holding only the coarse "
            "subnetwork; evaluation needs a stage-2 checkpoint"
        )
    model = build_variant(cfg)
    model.load_state_dict(load_model_state(blocks))
    return model, cfg


def cmd_eval(args):
    model, _ = _model_from_checkpoint(args.ckpt)
    refs = scan_dataset(args.data)
    out = Path(args.out)
    _write_manifest(out, "eval", None,
                    inputs={"ckpt": _hash_file(args.ckpt), "data": _hash_tree(args.data)})
    report = benchmark(model, refs, out_dir=out, max_images=args.max_images,
                       montage=args.montage)
    print(f"evaluated {len(report.per_image)} images: "
          f"mean PSNR {report.mean_psnr:.3f} dB, mean SSIM {report.mean_ssim:.5f}")
    return 0


def cmd_ablate(args):
    matrix = json.loads(Path(args.config_matrix).read_text(encoding="utf-8"))
    rows = matrix.get("rows")
    if not rows:
        raise ConfigError(f"{args.config_matrix}: expected a 'rows' list")
    out = Path(args.out)
    _write_manifest(out, "ablate", args.seed,
                    inputs={"config_matrix": _hash_file(args.config_matrix),
                            "data": _hash_tree(args.data)})
    pairs = _load_pairs(args.data)
    n_hold = max(1, int(round(len(pairs) * args.holdout_frac)))
    if n_hold >= len(pairs):
        raise ConfigError("holdout fraction leaves no training pairs")
    train_pairs, hold_pairs = pairs[:-n_hold], pairs[-n_hold:]

    results = []
    for row in rows:
        label = row.get("label") or row.get("config")
        overrides = _overrides(args)
        cfg = load_config(row["config"], overrides=overrides)
        slug = re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")
        row_dir = out / f"row_{slug}"
        log.info("ablation row %s: training", label)
        _, _, s1 = train_stage1(cfg.model, cfg.train, train_pairs, row_dir / "stage1")
        model, _, _ = train_stage2(cfg.model, cfg.train, train_pairs, s1, row_dir / "stage2")
        report = benchmark(model, hold_pairs, out_dir=row_dir / "eval")
        results.append((label, report.mean_psnr, report.mean_ssim, report.mean_time,
                        count_parameters(model)))

    lines = ["label,psnr_db,ssim,time_s,params"]
    table = [f"{'label':<12} {'PSNR':>8} {'SSIM':>8} {'Time':>9} {'Param':>12}"]
    for label, p, s, t, n in results:
        lines.append(f"{label},{p:.6f},{s:.6f},{t:.6f},{n}")
        table.append(f"{label:<12} {p:>8.3f} {s:>8.4f} {t:>8.3f}s {n:>12}")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "ablation.txt").write_text("\n".join(table) + "\n", encoding="utf-8")
    print("\n".join(table))
    return 0


def cmd_count_params(args):
    cfg = load_config(args.config, overrides=_overrides(args))
    model = build_variant(cfg.model)
    print(count_parameters(model))
    return 0


def build_parser():
    parser = _Parser(prog="msdeblur",
                     description="Multi-scale deblurring with learned down-scaling")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="generate a synthetic blur dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-pairs", type=int, default=8)
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="box3")
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage1-ckpt")
    p.add_argument("--resume")
    p.add_argument("--debug-freeze", action="store_true",
                   help="verify zero gradient flow into frozen weights each step")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="benchmark a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-images", type=int, default=0)
    p.add_argument("--montage", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare a matrix of configs")
    p.add_argument("--config-matrix", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-frac", type=float, default=0.25)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("count-params", help="print the model parameter count")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        traceback.print_exc()
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
