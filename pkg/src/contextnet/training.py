"""Adam optimizer and the epoch loop with validation-AUC early stopping."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from contextnet.data import EncodedDataset, batch_iter
from contextnet.metrics import auc, logloss
from contextnet.model import ModelConfig, Parameters, loss_and_grads, predict_scores
from contextnet.ops import ShapeError


class TrainingDiverged(RuntimeError):
    """Raised when the objective stops being finite."""

    def __init__(self, epoch: int, batch_index: int, loss: float):
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}"
        )
        self.epoch = epoch
        self.batch_index = batch_index
        self.loss = loss


@dataclass
class TrainConfig:
    batch_size: int = 1024
    lr: float = 1e-4
    max_epochs: int = 20
    patience: int = 2
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float
    val_logloss: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_auc: float = float("nan")

    def to_tsv(self) -> str:
        lines = ["epoch\ttrain_loss\tval_auc\tval_logloss\tseconds"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch}\t{e.train_loss:.10f}\t{e.val_auc:.10f}"
                f"\t{e.val_logloss:.10f}\t{e.seconds:.3f}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class AdamState:
    """First/second-moment buffers mirroring the parameter tensors."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: Parameters, lr: float = 1e-4) -> AdamState:
    named = params.named_tensors()
    return AdamState(
        m=[np.zeros_like(a) for _, a in named],
        v=[np.zeros_like(a) for _, a in named],
        lr=lr,
    )


def adam_step(params: Parameters, grads: Parameters, state: AdamState) -> None:
    """One bias-corrected Adam update, applied tensor-wise in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    p_named = params.named_tensors()
    g_named = grads.named_tensors()
    if len(p_named) != len(g_named):
        raise ShapeError("gradient structure does not match parameters")
    for i, ((_, p), (_, g)) in enumerate(zip(p_named, g_named)):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[i]
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def train(
    config: ModelConfig,
    params: Parameters,
    train_set: EncodedDataset,
    val_set: EncodedDataset,
    tconf: TrainConfig,
) -> tuple[Parameters, TrainHistory]:
    """Epoch loop: shuffled batches, Adam updates, validation-AUC stopping.

    Keeps a copy of the parameters at the best validation AUC and stops once
    more than `patience` consecutive evaluations fail to improve (patience 0
    stops at the first non-improving evaluation). Fully deterministic for a
    fixed (seed, configs, data).
    """
    state = init_adam(params, tconf.lr)
    history = TrainHistory()
    best = params.copy()
    best_auc = -np.inf
    stale = 0
    for epoch in range(tconf.max_epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        n_batches = 0
        for batch_index, batch in enumerate(
            batch_iter(train_set, tconf.batch_size, tconf.seed, epoch)
        ):
            objective, grads = loss_and_grads(batch, params, config)
            if not np.isfinite(objective):
                raise TrainingDiverged(epoch, batch_index, objective)
            adam_step(params, grads, state)
            loss_sum += objective
            n_batches += 1
        train_loss = loss_sum / max(n_batches, 1)

        evaluate_now = ((epoch + 1) % tconf.eval_every == 0) or (
            epoch == tconf.max_epochs - 1
        )
        val_auc = float("nan")
        val_ll = float("nan")
        if evaluate_now:
            val_scores = predict_scores(val_set, params, config)
            val_auc = auc(val_scores, val_set.labels)
            val_ll = logloss(val_scores, val_set.labels)
        history.epochs.append(
            EpochStats(epoch, train_loss, val_auc, val_ll, time.perf_counter() - t0)
        )
        if evaluate_now:
            if val_auc > best_auc:
                best_auc = val_auc
                best = params.copy()
                history.best_epoch = epoch
                history.best_val_auc = val_auc
                stale = 0
            else:
                stale += 1
                if stale > tconf.patience:
                    break
    return best, history
