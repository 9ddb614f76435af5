"""Optimization loop for the forecasting model.

The objective is the per-sample normalized squared error of predicted
future tables, averaged over the batch.  Validation tracks the quality of
the ports those predictions select: the true channel at the selected port
is compared against the reference channel per future step.

The metrics CSV stores both quantities in dB (10*log10 of the epoch-mean
ratio); exact-zero ratios are clamped to the -300 dB sentinel so the file
stays numeric.
"""

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from .dataset import Dataset
from .model import (
    PortLLM,
    frozen_checksums,
    save_checkpoint,
    trainable_parameters,
)
from .ports import select_port_single
from .seeds import rng_for, torch_seed_for

DB_SENTINEL = -300.0
_RATIO_FLOOR = 1e-30


class TrainingAborted(RuntimeError):
    """Raised when the loss goes non-finite; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    peak_lr: float = 1e-3
    warmup_steps: int = None  # None -> 5% of total steps
    min_lr: float = None  # None -> 1% of peak
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0  # extra periodic checkpoints; 0 = best/final only

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.min_lr is not None and self.min_lr > self.peak_lr:
            raise ValueError("min_lr cannot exceed peak_lr")

    def resolve_schedule(self, total_steps: int):
        """(warmup, min_lr) with defaults filled in; validates bounds."""
        warmup = (
            self.warmup_steps
            if self.warmup_steps is not None
            else max(1, round(0.05 * total_steps))
        )
        if not 0 <= warmup < total_steps:
            raise ValueError(
                f"warmup ({warmup}) must be below total steps ({total_steps})"
            )
        min_lr = self.min_lr if self.min_lr is not None else 0.01 * self.peak_lr
        return warmup, min_lr


def loss_nmse(s_hat, s):
    """Batch-mean of ||s - s_hat||^2 / ||s||^2 per sample."""
    if s_hat.dim() == 3:
        s_hat, s = s_hat.unsqueeze(0), s.unsqueeze(0)
    err = torch.sum(torch.abs(s - s_hat) ** 2, dim=(1, 2, 3))
    denom = torch.sum(torch.abs(s) ** 2, dim=(1, 2, 3))
    if torch.any(denom == 0):
        raise ValueError("degenerate target: a sample has zero norm")
    return torch.mean(err / denom)


def validate_port(s_hat, future, reference) -> float:
    """Mean selected-port error ratio over (sample, step), linear scale.

    s_hat, future: (B, F, N, M) complex arrays; reference: (B, F) complex
    port-(1,1) scalars (or their broadcast (B, F, N, M) form).  For each
    step the port is chosen from the predicted table against the constant
    reference table; the ratio compares the true channel at that port with
    the reference value.
    """
    s_hat = np.asarray(s_hat)
    future = np.asarray(future)
    reference = np.asarray(reference)
    if reference.ndim == 4:
        reference = reference[:, :, 0, 0]
    if s_hat.shape != future.shape or reference.shape != s_hat.shape[:2]:
        raise ValueError("mismatched validation shapes")
    if np.any(reference == 0):
        raise ValueError("degenerate reference channel")
    b, f = reference.shape
    shape = s_hat.shape[2:]
    ratios = np.empty((b, f))
    for k in range(b):
        for step in range(f):
            ref_table = np.broadcast_to(reference[k, step], shape)
            port, _ = select_port_single(s_hat[k, step], ref_table)
            h = future[k, step, port.n0, port.m0]
            h_ref = reference[k, step]
            ratios[k, step] = abs(h_ref - h) ** 2 / abs(h_ref) ** 2
    return float(ratios.mean())


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak, then cosine decay to the floor."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup, min_lr = cfg.resolve_schedule(total_steps)
    if step == 0:
        return 0.0
    if step <= warmup:
        return cfg.peak_lr * step / warmup
    step = min(step, total_steps)
    progress = (step - warmup) / (total_steps - warmup)
    return min_lr + (cfg.peak_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def ratio_to_db(ratio: float) -> float:
    return DB_SENTINEL if ratio < _RATIO_FLOOR else 10.0 * math.log10(ratio)


@dataclass
class TrainResult:
    model: PortLLM
    metrics: list  # rows of (epoch, step, lr, train_nmse, val_nmse_v)
    best_path: str = None
    final_path: str = None
    best_val_db: float = math.inf


METRICS_HEADER = ("epoch", "step", "lr", "train_nmse", "val_nmse_v")


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for epoch, step, lr, train_db, val_db in rows:
            writer.writerow(
                [epoch, step, f"{lr:.10g}", f"{train_db:.10g}", f"{val_db:.10g}"]
            )


def _adam_aux(optimizer, named_trainables):
    """Optimizer moments as named tensors for checkpoint storage."""
    aux = {}
    step_count = None
    for name, p in named_trainables:
        state = optimizer.state.get(p)
        if not state:
            continue
        aux[f"opt.exp_avg.{name}"] = state["exp_avg"].detach().clone()
        aux[f"opt.exp_avg_sq.{name}"] = state["exp_avg_sq"].detach().clone()
        step_count = state["step"]
    if step_count is not None:
        aux["opt.step"] = torch.as_tensor(step_count, dtype=torch.float32).reshape(1)
    return aux


def _restore_adam(optimizer, named_trainables, aux):
    if "opt.step" not in aux:
        return
    step = aux["opt.step"].reshape(()).clone()
    for name, p in named_trainables:
        key_avg = f"opt.exp_avg.{name}"
        key_sq = f"opt.exp_avg_sq.{name}"
        if key_avg in aux:
            optimizer.state[p] = {
                "step": step.clone(),
                "exp_avg": aux[key_avg].clone(),
                "exp_avg_sq": aux[key_sq].clone(),
            }


def _epoch_validation(model, dataset: Dataset, indices, batch_size: int) -> float:
    """dB port-validation metric over the given sample indices."""
    model.eval()
    ratios = []
    with torch.no_grad():
        for lo in range(0, len(indices), batch_size):
            idx = indices[lo : lo + batch_size]
            hist = torch.from_numpy(dataset.history[idx])
            s_hat = model(hist).numpy()
            ratios.append(
                validate_port(s_hat, dataset.future[idx], dataset.reference[idx])
                * len(idx)
            )
    model.train()
    return ratio_to_db(sum(ratios) / len(indices))


def train(
    model: PortLLM,
    dataset: Dataset,
    cfg: TrainConfig,
    out_dir=None,
    start_epoch: int = 0,
    optimizer_aux: dict = None,
) -> TrainResult:
    """Optimize the trainable parameters; returns the model and metrics log.

    Checkpoints (when out_dir is given): checkpoint-best.ckpt tracks the
    lowest validation metric, checkpoint-final.ckpt the last completed
    epoch; both carry optimizer moments so a run can resume.  A non-finite
    loss aborts with the last good checkpoint retained.
    """
    train_idx = dataset.train_idx
    if train_idx.size == 0:
        raise ValueError("empty training split")
    named_trainables = trainable_parameters(model)
    params = [p for _, p in named_trainables]
    steps_per_epoch = math.ceil(train_idx.size / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    cfg.resolve_schedule(total_steps)  # validate early

    torch.manual_seed(torch_seed_for(cfg.seed, "shuffle"))
    optimizer = torch.optim.Adam(
        params, lr=cfg.peak_lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )
    if optimizer_aux:
        _restore_adam(optimizer, named_trainables, optimizer_aux)

    checksums_before = frozen_checksums(model)
    result = TrainResult(model=model, metrics=[])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.best_path = os.path.join(out_dir, "checkpoint-best.ckpt")
        result.final_path = os.path.join(out_dir, "checkpoint-final.ckpt")

    def save(path, epoch, step):
        save_checkpoint(
            model,
            path,
            extra={"epoch": epoch, "step": step, "train_config": _cfg_json(cfg)},
            aux_tensors=_adam_aux(optimizer, named_trainables),
        )

    step = start_epoch * steps_per_epoch
    last_saved = None
    model.train()
    for epoch in range(start_epoch, cfg.epochs):
        order = rng_for(cfg.seed, "shuffle", epoch).permutation(train_idx.size)
        shuffled = train_idx[order]
        epoch_ratios = []
        for lo in range(0, shuffled.size, cfg.batch_size):
            idx = shuffled[lo : lo + cfg.batch_size]
            hist = torch.from_numpy(dataset.history[idx])
            target = torch.from_numpy(dataset.future[idx])
            step += 1
            lr = lr_at(step, total_steps, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss = loss_nmse(model(hist), target)
            if not torch.isfinite(loss):
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch} step {step}",
                    checkpoint=last_saved,
                )
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            optimizer.step()
            epoch_ratios.append(float(loss.detach()))
        train_db = ratio_to_db(sum(epoch_ratios) / len(epoch_ratios))
        val_db = _epoch_validation(model, dataset, dataset.test_idx, cfg.batch_size)
        result.metrics.append((epoch, step, lr, train_db, val_db))
        improved = val_db < result.best_val_db
        if improved:
            result.best_val_db = val_db
        if out_dir:
            save(result.final_path, epoch, step)
            last_saved = result.final_path
            if improved:
                save(result.best_path, epoch, step)
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save(
                    os.path.join(out_dir, f"checkpoint-epoch{epoch:04d}.ckpt"),
                    epoch,
                    step,
                )
    if frozen_checksums(model) != checksums_before:
        raise RuntimeError("frozen parameters changed during training")
    model.eval()
    return result


def _cfg_json(cfg: TrainConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)
