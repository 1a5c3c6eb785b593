"""Partition routing: score partitions with a linear model and probe the best.

The router is a single L x d matrix; the baseline model is the partitioning's
own representative matrix, and a trained model is a drop-in replacement with
the same shape. Nothing downstream branches on provenance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import Partitioning
from .data import PathLike, _as_vector_matrix, read_fbin, read_kv, write_fbin, write_kv
from .exact import TopKResult, _bounded_topk, exact_topk

BASELINE = "baseline"
LEARNT = "learnt"

__all__ = [
    "RoutingModel",
    "ProbeBudget",
    "score_partitions",
    "route",
    "search",
    "baseline_model",
    "save_model",
    "load_model",
    "BASELINE",
    "LEARNT",
]


@dataclass(frozen=True, eq=False)
class RoutingModel:
    """L x d float32 routing matrix plus a provenance tag."""

    weights: np.ndarray
    provenance: str = BASELINE

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", _as_vector_matrix(self.weights, "routing weights"))
        if self.provenance not in (BASELINE, LEARNT):
            raise ValueError(
                f"provenance must be {BASELINE!r} or {LEARNT!r}, got {self.provenance!r}"
            )

    @property
    def n_partitions(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ProbeBudget:
    """Number of partitions to probe, absolute or as a percentage of L."""

    count: int | None = None
    percent: float | None = None

    def __post_init__(self) -> None:
        if (self.count is None) == (self.percent is None):
            raise ValueError("set exactly one of count and percent")
        if self.count is not None and self.count < 1:
            raise ValueError(f"probe count must be >= 1, got {self.count}")
        if self.percent is not None and not 0.0 < self.percent <= 100.0:
            raise ValueError(f"probe percentage must be in (0, 100], got {self.percent}")

    @classmethod
    def parse(cls, text: str) -> "ProbeBudget":
        """Parse '7' as an absolute count and '2.5%' as a percentage."""
        text = text.strip()
        if text.endswith("%"):
            return cls(percent=float(text[:-1]))
        return cls(count=int(text))

    def resolve(self, n_partitions: int) -> int:
        """Concrete probe count for a given partition count.

        Percentages round up and never drop below one probe.
        """
        if self.percent is not None:
            # the 1e-9 nudge keeps ceil() stable when percent * L / 100 is exact
            ell = math.ceil(self.percent * n_partitions / 100.0 - 1e-9)
            return max(1, ell)
        if self.count > n_partitions:
            raise ValueError(f"probe count {self.count} exceeds {n_partitions} partitions")
        return self.count

    def describe(self) -> str:
        if self.percent is not None:
            return f"{self.percent:g}%"
        return str(self.count)


def score_partitions(q: np.ndarray, model: RoutingModel) -> np.ndarray:
    """Routing scores Wq as float64."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.size != model.dim:
        raise ValueError(f"query has dim {q.size}, model has dim {model.dim}")
    return model.weights @ q


def route(q: np.ndarray, model: RoutingModel, budget: ProbeBudget) -> np.ndarray:
    """The `ell` best partition indices, ordered by (score desc, index asc)."""
    scores = score_partitions(q, model)
    ell = budget.resolve(model.n_partitions)
    ids, _ = _bounded_topk(scores, np.arange(model.n_partitions, dtype=np.int64), ell)
    return ids


def search(
    q: np.ndarray,
    collection,
    partitioning: Partitioning,
    model: RoutingModel,
    budget: ProbeBudget,
    k: int,
) -> TopKResult:
    """Top-k by inner product among members of the routed partitions."""
    if model.n_partitions != partitioning.n_partitions:
        raise ValueError(
            f"model has {model.n_partitions} partitions, partitioning has "
            f"{partitioning.n_partitions}"
        )
    if partitioning.count != collection.count:
        raise ValueError(
            f"partitioning covers {partitioning.count} vectors, collection has {collection.count}"
        )
    probed = route(q, model, budget)
    members = [partitioning.member_lists[i] for i in probed]
    candidates = np.concatenate(members) if members else np.empty(0, dtype=np.int64)
    return exact_topk(q, collection, k, candidate_ids=candidates)


def baseline_model(partitioning: Partitioning) -> RoutingModel:
    """Routing model whose weights are the partitioning's representatives."""
    return RoutingModel(weights=partitioning.representatives.copy(), provenance=BASELINE)


# ---------------------------------------------------------------------------
# checkpoints: <prefix>.w.fbin + <prefix>.meta


def save_model(
    model: RoutingModel, prefix: PathLike, run_id: str = "", create_parents: bool = False
) -> dict[str, Path]:
    """Persist a routing model under a path prefix; returns the written paths."""
    prefix = Path(prefix)
    if not prefix.parent.exists():
        if not create_parents:
            raise FileNotFoundError(f"parent directory does not exist: {prefix.parent}")
        prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "weights": prefix.with_name(prefix.name + ".w.fbin"),
        "meta": prefix.with_name(prefix.name + ".meta"),
    }
    write_fbin(paths["weights"], model.weights)
    write_kv(
        paths["meta"],
        {
            "format": "routing-model-v1",
            "L": model.n_partitions,
            "d": model.dim,
            "provenance": model.provenance,
            "run_id": run_id,
        },
    )
    return paths


def load_model(prefix: PathLike) -> RoutingModel:
    prefix = Path(prefix)
    meta = read_kv(prefix.with_name(prefix.name + ".meta"))
    for key in ("L", "d", "provenance"):
        if key not in meta:
            raise ValueError(f"model metadata is missing key {key!r}")
    weights = read_fbin(prefix.with_name(prefix.name + ".w.fbin"))
    if weights.shape != (int(meta["L"]), int(meta["d"])):
        raise ValueError(
            f"weight matrix shape {weights.shape} does not match metadata "
            f"({meta['L']}, {meta['d']})"
        )
    return RoutingModel(weights=weights, provenance=meta["provenance"])
