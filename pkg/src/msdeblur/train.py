"""Two-stage modular training.

Stage 1 trains the coarse subnetwork alone against x2 bicubic down-sampled
ground truth. Stage 2 loads the stage-1 weights, freezes them, and trains the
remaining parameters against the full-resolution ground truth.

Determinism: every patch is sampled from a stream derived from
(seed, stage, epoch, pair index), and the per-epoch batch order from
(seed, stage, epoch), so fixed-seed runs and epoch-boundary resumes reproduce
the same trajectory exactly in single-worker mode.
"""

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (CheckpointError, load_checkpoint, load_model_state,
                         save_checkpoint, verify_config)
from .config import ModelConfig, TrainConfig
from .data import PatchSpec, make_coarse_gt, sample_patch
from .losses import LossWeights, SsimParams, l1_loss, msssim_loss
from .model import CoarseNet, DeblurModel, build_variant, freeze_coarse

log = logging.getLogger(__name__)

LOG_COLUMNS = ("stage", "epoch", "step", "lr", "loss", "l1_term", "ssim_term", "wall_time_s")


class NonFiniteLossError(RuntimeError):
    """Training aborted on a NaN/inf loss; the offending batch was saved."""


@dataclass
class TrainState:
    """Lifecycle counters for one training stage."""

    stage: int
    epoch: int = 0
    step: int = 0
    best_loss: float = float("inf")
    best_epoch: int = -1


def lr_at(epoch, opt):
    """Learning rate at an epoch: lr0 halved every lr_halving_period epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return opt.lr0 * 0.5 ** (epoch // opt.lr_halving_period)


def mix_terms(out, gt, weights, params):
    """(loss, l1 term, ms-ssim term); zero-weighted terms are skipped."""
    l1 = l1_loss(out, gt) if weights.lambda_l1 != 0 else out.new_zeros(())
    ss = msssim_loss(out, gt, weights, params) if weights.lambda_ss != 0 else out.new_zeros(())
    return weights.lambda_l1 * l1 + weights.lambda_ss * ss, l1, ss


def _epoch_order(seed, stage, epoch, n):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stage, epoch])))
    return rng.permutation(n)


def _patch_seed(seed, stage, epoch, index):
    return np.random.SeedSequence([seed, stage, epoch, int(index)])


def _make_batches(order, batch_size):
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _split_train_val(pairs, val_fraction):
    if val_fraction <= 0 or len(pairs) < 2:
        return list(pairs), []
    n_val = max(1, int(round(len(pairs) * val_fraction)))
    n_val = min(n_val, len(pairs) - 1)
    return list(pairs[:-n_val]), list(pairs[-n_val:])


def _load_batch(pairs, indices, spec, seed, stage, epoch):
    blurs, sharps = [], []
    for i in indices:
        blur, sharp = sample_patch(pairs[i], spec, _patch_seed(seed, stage, epoch, i))
        blurs.append(blur)
        sharps.append(sharp)
    return torch.cat(blurs, dim=0), torch.cat(sharps, dim=0)


def _check_finite(loss, batch, out_dir, stage, epoch, step):
    if torch.isfinite(loss):
        return
    diag = Path(out_dir) / f"nonfinite_stage{stage}_step{step}.npz"
    blur, sharp = batch
    np.savez(diag, blur=blur.detach().numpy(), sharp=sharp.detach().numpy(),
             epoch=epoch, step=step)
    raise NonFiniteLossError(
        f"non-finite loss at stage {stage} epoch {epoch} step {step}; batch saved to {diag}"
    )


def _adam(params, opt, lr):
    return torch.optim.Adam(params, lr=lr, betas=(opt.beta1, opt.beta2), eps=opt.epsilon)


def _optimizer_blocks(optimizer, named_params):
    blocks = {}
    for name, p in named_params:
        state = optimizer.state.get(p)
        if not state:
            continue
        blocks[f"adam/{name}/step"] = np.asarray(float(state["step"]))
        blocks[f"adam/{name}/exp_avg"] = state["exp_avg"]
        blocks[f"adam/{name}/exp_avg_sq"] = state["exp_avg_sq"]
    return blocks


def _restore_optimizer(optimizer, named_params, blocks):
    for name, p in named_params:
        key = f"adam/{name}/step"
        if key not in blocks:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(blocks[key])),
            "exp_avg": torch.from_numpy(blocks[f"adam/{name}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(blocks[f"adam/{name}/exp_avg_sq"].copy()),
        }


def _rng_blocks(seed):
    return {
        "rng/torch": torch.get_rng_state().numpy().tobytes(),
        "rng/data": str(seed).encode("utf-8"),
    }


class _LossLog:
    def __init__(self, path, resume=False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        mode = "a" if (resume and self.path.exists()) else "w"
        self._fh = open(self.path, mode, newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        if mode == "w":
            self._writer.writerow(LOG_COLUMNS)

    def row(self, stage, epoch, step, lr, loss, l1, ss, wall):
        self._writer.writerow(
            [stage, epoch, step, f"{lr:.10g}", f"{loss:.10g}", f"{l1:.10g}", f"{ss:.10g}", f"{wall:.3f}"]
        )
        self._fh.flush()

    def close(self):
        self._fh.close()


def _run_stage(stage, model, forward_loss, trainable, cfg: ModelConfig, tcfg: TrainConfig,
               pairs, out_dir, resume_from=None, debug_freeze_check=None):
    """Shared epoch loop for both stages. `forward_loss(blur, sharp)` returns
    (loss, l1, ss); `trainable` is the list of (name, param) being optimized."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opt_cfg = tcfg.optimizer
    optimizer = _adam([p for _, p in trainable], opt_cfg, opt_cfg.lr0)
    state = TrainState(stage=stage)

    if resume_from is not None:
        meta, blocks = load_checkpoint(resume_from)
        if meta["stage"] != stage:
            raise CheckpointError(
                f"cannot resume stage {stage} from a stage-{meta['stage']} checkpoint"
            )
        verify_config(blocks, cfg.to_dict())
        model.load_state_dict(load_model_state(blocks))
        _restore_optimizer(optimizer, trainable, blocks)
        state.epoch = meta["epoch"]
        state.step = meta["step"]
        import json as _json
        extra = _json.loads(bytes(blocks["json/extra"]).decode("utf-8")) if "json/extra" in blocks else {}
        state.best_loss = extra.get("best_loss", float("inf"))
        state.best_epoch = extra.get("best_epoch", -1)
        log.info("resumed stage %d at epoch %d (step %d)", stage, state.epoch, state.step)

    train_pairs, val_pairs = _split_train_val(pairs, tcfg.val_fraction)
    if not train_pairs:
        raise ValueError("no training pairs")
    spec = PatchSpec(size_stage1=tcfg.patch_size, size_stage2=tcfg.patch_size // 2,
                     augment=tcfg.augment)
    logger = _LossLog(out_dir / f"loss_log_stage{stage}.csv", resume=resume_from is not None)

    def save(tag, epoch):
        path = out_dir / f"stage{stage}_{tag}.ckpt"
        save_checkpoint(
            path, model.state_dict(), cfg.to_dict(), stage, epoch, state.step,
            optimizer_blocks=_optimizer_blocks(optimizer, trainable),
            rng_blocks=_rng_blocks(tcfg.seed),
            extra_json={"best_loss": state.best_loss, "best_epoch": state.best_epoch},
        )
        return path

    t0 = time.perf_counter()
    try:
        for epoch in range(state.epoch, opt_cfg.epochs):
            lr = lr_at(epoch, opt_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = _epoch_order(tcfg.seed, stage, epoch, len(train_pairs))
            sums = np.zeros(3)
            n_batches = 0
            for batch_idx in _make_batches(order, opt_cfg.batch_size):
                blur, sharp = _load_batch(train_pairs, batch_idx, spec, tcfg.seed, stage, epoch)
                optimizer.zero_grad(set_to_none=True)
                loss, l1, ss = forward_loss(blur, sharp)
                _check_finite(loss, (blur, sharp), out_dir, stage, epoch, state.step)
                loss.backward()
                if debug_freeze_check is not None:
                    debug_freeze_check()
                optimizer.step()
                sums += (loss.item(), l1.item(), ss.item())
                n_batches += 1
                state.step += 1
            state.epoch = epoch + 1
            mean_loss, mean_l1, mean_ss = sums / max(n_batches, 1)

            track_loss = mean_loss
            if val_pairs:
                track_loss = _validation_loss(forward_loss, val_pairs, spec, tcfg, stage)
            if track_loss < state.best_loss:
                state.best_loss = track_loss
                state.best_epoch = epoch
                save("best", state.epoch)
            logger.row(stage, epoch, state.step, lr, mean_loss, mean_l1, mean_ss,
                       time.perf_counter() - t0)
            if state.epoch % tcfg.checkpoint_every == 0:
                save(f"epoch{state.epoch:05d}", state.epoch)
    finally:
        logger.close()
    final = save("final", state.epoch)
    log.info("stage %d finished: %d epochs, %d steps, final checkpoint %s",
             stage, state.epoch, state.step, final)
    return state, final


_VAL_EPOCH_TAG = 10**9  # keeps validation patch streams disjoint from training epochs


def _validation_loss(forward_loss, val_pairs, spec, tcfg, stage):
    with torch.no_grad():
        total = 0.0
        for i, pair in enumerate(val_pairs):
            blur, sharp = sample_patch(pair, spec, _patch_seed(tcfg.seed, stage, _VAL_EPOCH_TAG, i))
            loss, _, _ = forward_loss(blur, sharp)
            total += loss.item()
    return total / len(val_pairs)


def train_stage1(cfg: ModelConfig, tcfg: TrainConfig, pairs, out_dir,
                 weights=LossWeights(), resume_from=None):
    """Stage 1: optimize the coarse subnetwork against x2 bicubic targets.

    Only the coarse subnetwork is instantiated. Returns (model, state, path).
    """
    torch.manual_seed(tcfg.seed)
    model = CoarseNet(cfg)
    params = SsimParams(window_size=tcfg.ssim_window)

    def forward_loss(blur, sharp):
        out = model(blur)
        return mix_terms(out, make_coarse_gt(sharp), weights, params)

    trainable = list(model.named_parameters())
    state, final = _run_stage(1, model, forward_loss, trainable, cfg, tcfg, pairs,
                              out_dir, resume_from=resume_from)
    return model, state, final


def train_stage2(cfg: ModelConfig, tcfg: TrainConfig, pairs, stage1_ckpt, out_dir,
                 weights=LossWeights(), resume_from=None, debug_freeze=False):
    """Stage 2: freeze the stage-1 coarse weights and optimize the rest.

    stage1_ckpt must be a stage-1 checkpoint with a matching model config.
    Returns (model, state, path).
    """
    torch.manual_seed(tcfg.seed)
    model = build_variant(cfg)
    if not isinstance(model, DeblurModel):
        raise ValueError("two-stage training applies to the multiscale variant only")

    meta, blocks = load_checkpoint(stage1_ckpt)
    if meta["stage"] != 1:
        raise CheckpointError(f"{stage1_ckpt} is a stage-{meta['stage']} checkpoint, need stage 1")
    verify_config(blocks, cfg.to_dict())
    model.coarse.load_state_dict(load_model_state(blocks))
    freeze_coarse(model)

    params = SsimParams(window_size=tcfg.ssim_window)

    def forward_loss(blur, sharp):
        coarse_out = model.coarse(blur)
        out = model.fine(blur, coarse_out)
        if model.x1 is not None:
            out = model.x1(blur, out)
        return mix_terms(out, sharp, weights, params)

    trainable = [(n, p) for n, p in model.named_parameters() if p.requires_grad]

    def freeze_check():
        for name, p in model.coarse.named_parameters():
            if p.grad is not None and p.grad.abs().max() != 0:
                raise AssertionError(f"gradient leaked into frozen coarse parameter {name}")

    state, final = _run_stage(2, model, forward_loss, trainable, cfg, tcfg, pairs,
                              out_dir, resume_from=resume_from,
                              debug_freeze_check=freeze_check if debug_freeze else None)
    return model, state, final
