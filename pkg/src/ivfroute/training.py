"""Train the routing matrix with softmax cross-entropy against oracle labels.

The single-target loss for a query q with target partition t is
-log softmax(Wq)[t]. The multi-target variant weights every partition's
log-probability by a normalized gain of 2 for targets and 1 otherwise, each
perturbed by subtracting a uniform draw from [0, 1) so that exact gain ties
break randomly; the noise is redrawn once per query per epoch.

All accumulation happens in float64; model snapshots are stored as float32.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import Partitioning
from .data import PathLike
from .exact import LabeledQuerySet
from .routing import LEARNT, RoutingModel

LOSS_TOP1 = "top1_ce"
LOSS_TOPK = "topk_xendcg"
LOSSES = (LOSS_TOP1, LOSS_TOPK)

INIT_FROM_PARTITIONING = "from_partitioning"
INIT_ZEROS = "zeros"
INIT_RANDOM = "random"
INITS = (INIT_FROM_PARTITIONING, INIT_ZEROS, INIT_RANDOM)

__all__ = [
    "TrainConfig",
    "AdamState",
    "GainNoise",
    "EpochStats",
    "TrainReport",
    "softmax",
    "loss_top1",
    "loss_topk",
    "grad_top1",
    "grad_topk",
    "adam_step",
    "train",
    "LOSS_TOP1",
    "LOSS_TOPK",
    "INITS",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 512
    max_epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: str = LOSS_TOP1
    init: str = INIT_FROM_PARTITIONING

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class AdamState:
    """First and second moment accumulators, float64."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "AdamState":
        return cls(m=np.zeros(shape, dtype=np.float64), v=np.zeros(shape, dtype=np.float64))


@dataclass(frozen=True)
class GainNoise:
    """Per-query uniform [0, 1) draws subtracted from the multi-target gains."""

    gammas: np.ndarray
    seed: int

    @classmethod
    def sample(cls, n_queries: int, n_partitions: int, seed) -> "GainNoise":
        """Draw fresh noise; `seed` may be an int or an existing Generator."""
        rng = np.random.default_rng(seed)
        gammas = rng.random((n_queries, n_partitions))
        return cls(gammas=gammas, seed=seed if isinstance(seed, int) else -1)


# ---------------------------------------------------------------------------
# per-query operations


def _score_vector(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise ValueError("scores must be non-empty")
    if not np.isfinite(s).all():
        raise ValueError("scores contain non-finite values")
    return s


def softmax(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a score vector, float64."""
    s = _score_vector(scores)
    e = np.exp(s - s.max())
    return e / e.sum()


def loss_top1(scores: np.ndarray, target: int) -> float:
    """-log softmax(scores)[target], computed via log-sum-exp."""
    s = _score_vector(scores)
    if not 0 <= target < s.size:
        raise ValueError(f"target {target} out of range for {s.size} partitions")
    z = s - s.max()
    return float(np.log(np.exp(z).sum()) - z[target])


def _gain_weights(n_partitions: int, target_set: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    targets = np.unique(np.asarray(target_set, dtype=np.int64))
    if targets.size == 0:
        raise ValueError("target set must be non-empty")
    if targets[0] < 0 or targets[-1] >= n_partitions:
        raise ValueError("target partition out of range")
    g = np.asarray(gammas, dtype=np.float64).reshape(-1)
    if g.size != n_partitions:
        raise ValueError(f"gammas must have length {n_partitions}, got {g.size}")
    if (g < 0).any() or (g >= 1).any():
        raise ValueError("gammas must lie in [0, 1)")
    gains = np.ones(n_partitions, dtype=np.float64)
    gains[targets] = 2.0
    gains -= g
    return gains / gains.sum()


def loss_topk(scores: np.ndarray, target_set: np.ndarray, gammas: np.ndarray) -> float:
    """Gain-weighted cross entropy over the full partition list."""
    s = _score_vector(scores)
    w = _gain_weights(s.size, target_set, gammas)
    z = s - s.max()
    logp = z - np.log(np.exp(z).sum())
    return float(-(w * logp).sum())


def _grad_inputs(q: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"weights must be 2-D, got shape {w.shape}")
    qv = np.asarray(q, dtype=np.float64).reshape(-1)
    if qv.size != w.shape[1]:
        raise ValueError(f"query has dim {qv.size}, weights have dim {w.shape[1]}")
    return qv, w


def grad_top1(q: np.ndarray, weights: np.ndarray, target: int) -> np.ndarray:
    """Gradient of loss_top1 w.r.t. the weight matrix: (p - e_target) q^T."""
    qv, w = _grad_inputs(q, weights)
    p = softmax(w @ qv)
    if not 0 <= target < w.shape[0]:
        raise ValueError(f"target {target} out of range for {w.shape[0]} partitions")
    p[target] -= 1.0
    return np.outer(p, qv)


def grad_topk(q: np.ndarray, weights: np.ndarray, target_set: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Gradient of loss_topk w.r.t. the weight matrix: (p - w_gain) q^T."""
    qv, w = _grad_inputs(q, weights)
    gain_w = _gain_weights(w.shape[0], target_set, gammas)
    p = softmax(w @ qv)
    return np.outer(p - gain_w, qv)


def adam_step(
    weights: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    config: TrainConfig,
    t: int,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns the new weights and state."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != weights.shape:
        raise ValueError(f"gradient shape {g.shape} does not match weights {weights.shape}")
    if not np.isfinite(g).all():
        raise ValueError("gradient contains non-finite values")
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_w = weights - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return new_w, AdamState(m=m, v=v)


# ---------------------------------------------------------------------------
# batched training loop


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainReport:
    """Loss history plus the index of the snapshot that was kept.

    best_epoch 0 refers to the untrained initial weights.
    """

    initial_val_loss: float
    epochs: list[EpochStats]
    best_epoch: int
    best_val_loss: float

    def to_csv(self, path: PathLike) -> None:
        with open(Path(path), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for row in self.epochs:
                writer.writerow([row.epoch, f"{row.train_loss:.10g}", f"{row.val_loss:.10g}"])


def _log_softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _weight_rows(targets: list[np.ndarray], gammas: np.ndarray) -> np.ndarray:
    gains = 1.0 - gammas
    for i, t in enumerate(targets):
        gains[i, t] += 1.0
    return gains / gains.sum(axis=1, keepdims=True)


def _batch_terms(
    weights: np.ndarray,
    queries: np.ndarray,
    targets: np.ndarray | None,
    weight_rows: np.ndarray | None,
) -> tuple[float, np.ndarray]:
    """Summed loss and mean gradient for one mini-batch."""
    n = queries.shape[0]
    logp = _log_softmax_rows(queries @ weights.T)
    p = np.exp(logp)
    if targets is not None:
        rows = np.arange(n)
        loss_sum = float(-logp[rows, targets].sum())
        p[rows, targets] -= 1.0
        grad = p.T @ queries / n
    else:
        loss_sum = float(-(weight_rows * logp).sum())
        grad = (p - weight_rows).T @ queries / n
    return loss_sum, grad


def _mean_loss(
    weights: np.ndarray,
    queries: np.ndarray,
    targets: np.ndarray | None,
    weight_rows: np.ndarray | None,
    batch_size: int,
) -> float:
    total = 0.0
    for start in range(0, queries.shape[0], batch_size):
        stop = start + batch_size
        logp = _log_softmax_rows(queries[start:stop] @ weights.T)
        if targets is not None:
            total += float(-logp[np.arange(logp.shape[0]), targets[start:stop]].sum())
        else:
            total += float(-(weight_rows[start:stop] * logp).sum())
    return total / queries.shape[0]


def _initial_weights(
    config: TrainConfig, partitioning: Partitioning, rng: np.random.Generator
) -> np.ndarray:
    shape = (partitioning.n_partitions, partitioning.dim)
    if config.init == INIT_FROM_PARTITIONING:
        return partitioning.representatives.astype(np.float64)
    if config.init == INIT_ZEROS:
        return np.zeros(shape, dtype=np.float64)
    return rng.standard_normal(shape) / np.sqrt(shape[1])


def train(
    labeled_train: LabeledQuerySet,
    labeled_val: LabeledQuerySet,
    partitioning: Partitioning,
    config: TrainConfig = TrainConfig(),
) -> tuple[RoutingModel, TrainReport]:
    """Fit the routing matrix; keeps the snapshot with the best validation loss.

    Runs to max_epochs, raising if the training loss turns non-finite.
    Ties in validation loss keep the earliest snapshot, and the untrained
    initial weights participate as snapshot 0.
    """
    n_parts = partitioning.n_partitions
    if labeled_train.n_partitions != n_parts or labeled_val.n_partitions != n_parts:
        raise ValueError("label sets and partitioning disagree on the partition count")
    if labeled_train.dim != partitioning.dim or labeled_val.dim != partitioning.dim:
        raise ValueError("label sets and partitioning disagree on the vector dimension")
    if labeled_train.count == 0 or labeled_val.count == 0:
        raise ValueError("train and validation sets must be non-empty")

    rng = np.random.default_rng(config.seed)
    weights = _initial_weights(config, partitioning, rng)
    q_train = labeled_train.queries.astype(np.float64)
    q_val = labeled_val.queries.astype(np.float64)
    use_top1 = config.loss == LOSS_TOP1
    if use_top1:
        tr_targets = labeled_train.single_targets()
        va_targets = labeled_val.single_targets()
        va_weight_rows = None
    else:
        tr_targets = va_targets = None

    n_train = labeled_train.count
    batch = config.batch_size

    def val_loss_of(w: np.ndarray) -> float:
        if use_top1:
            return _mean_loss(w, q_val, va_targets, None, batch)
        noise = GainNoise.sample(labeled_val.count, n_parts, rng)
        rows = _weight_rows(labeled_val.targets, noise.gammas)
        return _mean_loss(w, q_val, None, rows, batch)

    initial_val = val_loss_of(weights)
    best_val, best_epoch, best_weights = initial_val, 0, weights.copy()
    state = AdamState.zeros(weights.shape)
    step = 0
    history: list[EpochStats] = []
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n_train)
        if use_top1:
            epoch_weight_rows = None
        else:
            noise = GainNoise.sample(n_train, n_parts, rng)
            epoch_weight_rows = _weight_rows(labeled_train.targets, noise.gammas)
        loss_sum = 0.0
        for start in range(0, n_train, batch):
            idx = perm[start : start + batch]
            batch_rows = None if use_top1 else epoch_weight_rows[idx]
            batch_targets = tr_targets[idx] if use_top1 else None
            batch_loss, grad = _batch_terms(weights, q_train[idx], batch_targets, batch_rows)
            loss_sum += batch_loss
            step += 1
            weights, state = adam_step(weights, grad, state, config, step)
        train_loss = loss_sum / n_train
        if not np.isfinite(train_loss):
            raise ValueError(f"training loss became non-finite at epoch {epoch}")
        val_loss = val_loss_of(weights)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        if val_loss < best_val:
            best_val, best_epoch, best_weights = val_loss, epoch, weights.copy()
    model = RoutingModel(weights=best_weights.astype(np.float32), provenance=LEARNT)
    report = TrainReport(
        initial_val_loss=initial_val,
        epochs=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
    )
    return model, report
