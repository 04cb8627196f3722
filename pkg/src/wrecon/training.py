"""Training loop: Adam on the batch MSE, per-epoch validation, and
best-validation-PSNR checkpointing. Deterministic given the seed."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kspace, metrics
from .autodiff import Tensor, adam_step, backward, mse_loss, no_grad
from .checkpoint import save_checkpoint, snapshot_checkpoint
from .model import cascade_forward

__all__ = ["TrainSettings", "EpochLog", "train"]


@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float  # nan for the pre-training validation row
    val_psnr: float
    val_nmse: float


def _stack_inputs(dataset):
    xu = np.stack([it.zero_filled for it in dataset.items])[:, None]
    xt = np.stack([it.target for it in dataset.items])[:, None]
    return xu.astype(np.float32), xt.astype(np.float32)


def _measurements(dataset):
    return np.stack([kspace.undersample(it.target, dataset.mask)
                     for it in dataset.items])


def _dedupe_params(models):
    seen = {}
    for model in models:
        for p in model.parameters():
            seen.setdefault(id(p), p)
    return list(seen.values())


def train(models, train_set, val_set, *, mode, fidelity_lam, settings,
          checkpoint_path=None, share_weights=False, log=None):
    """Minimize the reconstruction MSE over the training pairs.

    mode "standalone" feeds the aliased input straight through the single
    model; mode "cascade" runs the full block/fidelity chain (gradients
    included). Returns (history, best_checkpoint, best_epoch).
    """
    if mode not in ("standalone", "cascade"):
        raise ValueError(f"mode must be 'standalone' or 'cascade', got {mode!r}")
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if mode == "standalone" and len(models) != 1:
        raise ValueError("standalone mode trains exactly one model")

    mask = train_set.mask
    xu_tr, xt_tr = _stack_inputs(train_set)
    xu_va, xt_va = _stack_inputs(val_set)
    y_tr = _measurements(train_set) if mode == "cascade" else None
    y_va = _measurements(val_set) if mode == "cascade" else None

    params = _dedupe_params(models)
    rng = np.random.Generator(np.random.PCG64(settings.seed))
    bs = settings.batch_size

    def forward_batch(xu, y, training):
        x = Tensor(xu)
        if mode == "standalone":
            return models[0].forward(x, training=training)
        return cascade_forward(models, x, y, mask, fidelity_lam, training=training)

    def validate():
        psnrs = []
        nmses = []
        with no_grad():
            for lo in range(0, len(xu_va), bs):
                sl = slice(lo, lo + bs)
                pred = forward_batch(xu_va[sl], None if y_va is None else y_va[sl],
                                     training=False).data
                for p, t in zip(pred[:, 0], xt_va[sl, 0]):
                    psnrs.append(metrics.psnr(p, t, data_range=float(t.max())))
                    nmses.append(metrics.nmse(p, t))
        return float(np.mean(psnrs)), float(np.mean(nmses))

    def snapshot(epoch):
        return snapshot_checkpoint(
            models, mode=mode, n_cascades=len(models), fidelity_lam=fidelity_lam,
            share_weights=share_weights, epoch=epoch, seed=settings.seed)

    history = []
    val_psnr, val_nmse = validate()
    history.append(EpochLog(epoch=0, train_loss=math.nan, val_psnr=val_psnr,
                            val_nmse=val_nmse))
    best_psnr, best_epoch = val_psnr, 0
    best_ck = snapshot(0)
    if checkpoint_path:
        save_checkpoint(best_ck, checkpoint_path)
    if log:
        log(history[-1], best_epoch)

    n = len(xu_tr)
    for epoch in range(1, settings.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            batch = perm[lo : lo + bs]
            pred = forward_batch(xu_tr[batch], None if y_tr is None else y_tr[batch],
                                 training=True)
            loss = mse_loss(pred, Tensor(xt_tr[batch]))
            backward(loss)
            adam_step(params, lr=settings.lr)
            total += float(loss.data) * len(batch)
        train_loss = total / n
        val_psnr, val_nmse = validate()
        history.append(EpochLog(epoch=epoch, train_loss=train_loss,
                                val_psnr=val_psnr, val_nmse=val_nmse))
        if val_psnr > best_psnr:
            best_psnr, best_epoch = val_psnr, epoch
            best_ck = snapshot(epoch)
            if checkpoint_path:
                save_checkpoint(best_ck, checkpoint_path)
        if log:
            log(history[-1], best_epoch)

    return history, best_ck, best_epoch
