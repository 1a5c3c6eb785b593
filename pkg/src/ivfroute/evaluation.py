"""Routing quality metrics: top-k accuracy sweeps, MRR, and McNemar tests.

Top-k accuracy at probe budget ell is the mean fraction of a query's exact
top-k neighbours whose partitions fall inside the ell probed partitions.
Ground truth is always recomputed from the collection (or passed in as
precomputed exact top-k ids), never read back from label files built for a
different k.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .clustering import Partitioning
from .data import PathLike, QuerySet, VectorCollection
from .exact import LabeledQuerySet, _query_matrix, exact_topk_batch
from .routing import ProbeBudget, RoutingModel

__all__ = [
    "SweepRow",
    "SignificanceRow",
    "EvalReport",
    "topk_accuracy",
    "routing_hits",
    "mrr",
    "mcnemar",
    "sweep",
]


@dataclass(frozen=True)
class SweepRow:
    model: str
    algorithm: str
    ell_pct: float
    ell_abs: int
    k: int
    accuracy: float
    n_queries: int


@dataclass(frozen=True)
class SignificanceRow:
    ell_pct: float
    ell_abs: int
    model_a: str
    model_b: str
    b: int
    c: int
    statistic: float
    p_value: float


@dataclass
class EvalReport:
    """Sweep cells plus per-model MRR, per-query hits, and McNemar results."""

    rows: list[SweepRow]
    mrr: dict[str, float]
    hits: dict[tuple[str, float], np.ndarray] = field(default_factory=dict)
    significance: list[SignificanceRow] = field(default_factory=list)

    def to_csv(self, path: PathLike) -> None:
        with open(Path(path), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["model", "algorithm", "ell_pct", "ell_abs", "k", "accuracy", "n_queries"])
            for row in self.rows:
                writer.writerow(
                    [
                        row.model,
                        row.algorithm,
                        f"{row.ell_pct:g}",
                        row.ell_abs,
                        row.k,
                        f"{row.accuracy:.6f}",
                        row.n_queries,
                    ]
                )

    def significance_to_csv(self, path: PathLike) -> None:
        with open(Path(path), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["ell_pct", "ell_abs", "model_a", "model_b", "b", "c", "statistic", "p_value"]
            )
            for row in self.significance:
                writer.writerow(
                    [
                        f"{row.ell_pct:g}",
                        row.ell_abs,
                        row.model_a,
                        row.model_b,
                        row.b,
                        row.c,
                        f"{row.statistic:.6g}",
                        f"{row.p_value:.6g}",
                    ]
                )

    def format_summary(self) -> str:
        lines = ["model      algo       ell%    ell    k   accuracy   n"]
        for r in self.rows:
            lines.append(
                f"{r.model:<10} {r.algorithm:<10} {r.ell_pct:<7g} {r.ell_abs:<6d} "
                f"{r.k:<3d} {r.accuracy:<10.4f} {r.n_queries}"
            )
        for name, value in self.mrr.items():
            lines.append(f"mrr[{name}] = {value:.4f}")
        for s in self.significance:
            lines.append(
                f"mcnemar ell={s.ell_pct:g}% ({s.model_a} vs {s.model_b}): "
                f"b={s.b} c={s.c} statistic={s.statistic:.4f} p={s.p_value:.6g}"
            )
        return "\n".join(lines)


def _rank_matrix(q_mat64: np.ndarray, model: RoutingModel) -> np.ndarray:
    """Rank of every partition per query under (score desc, index asc); 0-based.

    Scores are computed per query with the same matrix-vector product as
    route(), so rank-based evaluation agrees with routing on near-ties.
    """
    w64 = model.weights.astype(np.float64)
    scores = np.empty((q_mat64.shape[0], w64.shape[0]), dtype=np.float64)
    for r in range(q_mat64.shape[0]):
        scores[r] = w64 @ q_mat64[r]
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(scores.shape[1])[None, :], axis=1)
    return ranks


def _ground_truth(
    queries, collection: VectorCollection, k: int, ground_truth_ids: np.ndarray | None
) -> np.ndarray:
    if ground_truth_ids is None:
        ids, _ = exact_topk_batch(queries, collection, k)
        return ids
    ids = np.asarray(ground_truth_ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] < k:
        raise ValueError(f"precomputed ground-truth ids must have at least {k} columns")
    return ids[:, :k]


def topk_accuracy(
    queries,
    collection: VectorCollection,
    partitioning: Partitioning,
    model: RoutingModel,
    budget: ProbeBudget,
    k: int,
    *,
    ground_truth_ids: np.ndarray | None = None,
) -> float:
    """Mean fraction of exact top-k neighbours reachable within the budget."""
    q_mat = _query_matrix(queries)
    ids = _ground_truth(q_mat, collection, k, ground_truth_ids)
    parts = partitioning.assignment[ids].astype(np.int64)
    ranks = _rank_matrix(q_mat.astype(np.float64), model)
    ell = budget.resolve(model.n_partitions)
    hit = np.take_along_axis(ranks, parts, axis=1) < ell
    return float(hit.mean())


def routing_hits(
    queries,
    collection: VectorCollection,
    partitioning: Partitioning,
    model: RoutingModel,
    budget: ProbeBudget,
    *,
    ground_truth_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Per-query booleans: is the exact top-1 partition probed (k=1)."""
    q_mat = _query_matrix(queries)
    ids = _ground_truth(q_mat, collection, 1, ground_truth_ids)
    parts = partitioning.assignment[ids[:, :1]].astype(np.int64)
    ranks = _rank_matrix(q_mat.astype(np.float64), model)
    ell = budget.resolve(model.n_partitions)
    return np.take_along_axis(ranks, parts, axis=1)[:, 0] < ell


def mrr(queries, labels: LabeledQuerySet, model: RoutingModel) -> float:
    """Mean reciprocal rank of the single labeled partition, full ranking."""
    q_mat = _query_matrix(queries)
    if q_mat.shape[0] != labels.count:
        raise ValueError(f"{q_mat.shape[0]} queries for {labels.count} labels")
    targets = labels.single_targets()
    ranks = _rank_matrix(q_mat.astype(np.float64), model)
    target_rank = ranks[np.arange(labels.count), targets]
    return float((1.0 / (target_rank + 1.0)).mean())


def _chi2_sf_1df(x: float) -> float:
    """Chi-square(1) survival via the regularized upper incomplete gamma."""
    return float(special.gammaincc(0.5, x / 2.0))


def mcnemar(hits_a: np.ndarray, hits_b: np.ndarray) -> tuple[float, float]:
    """Continuity-corrected McNemar test on paired per-query hit indicators.

    Returns (statistic, p_value); degenerate discordant count 0 yields (0, 1).
    """
    a = np.asarray(hits_a, dtype=bool).reshape(-1)
    b_arr = np.asarray(hits_b, dtype=bool).reshape(-1)
    if a.shape != b_arr.shape:
        raise ValueError(f"hit vectors differ in length: {a.shape} vs {b_arr.shape}")
    b = int((a & ~b_arr).sum())
    c = int((~a & b_arr).sum())
    if b + c == 0:
        return 0.0, 1.0
    diff = max(abs(b - c) - 1, 0)
    statistic = diff * diff / (b + c)
    return float(statistic), _chi2_sf_1df(statistic)


def sweep(
    queries: QuerySet,
    collection: VectorCollection,
    partitioning: Partitioning,
    models: Sequence[RoutingModel],
    budgets: Sequence[ProbeBudget],
    ks: Sequence[int],
    *,
    ground_truth_ids: np.ndarray | None = None,
    significance: bool = False,
) -> EvalReport:
    """Evaluate every (model, budget, k) cell on one partitioning.

    Rows come out grouped by model, then k, then budget in the given order.
    MRR is computed per model over the full ranking. With significance=True
    and exactly two models, a McNemar test on the k=1 hits is run at every
    budget.
    """
    if not models:
        raise ValueError("need at least one model to evaluate")
    if not budgets or not ks:
        raise ValueError("need at least one probe budget and one k")
    if any(k < 1 for k in ks):
        raise ValueError("every k must be >= 1")
    names = [model.provenance for model in models]
    if len(set(names)) != len(names):
        raise ValueError("model provenance tags must be unique within a sweep")
    n_parts = partitioning.n_partitions
    for model in models:
        if model.n_partitions != n_parts:
            raise ValueError("all models must match the partitioning's partition count")
    q_mat = _query_matrix(queries)
    n_q = q_mat.shape[0]
    kmax = max(ks)
    ids = _ground_truth(q_mat, collection, kmax, ground_truth_ids)
    q64 = q_mat.astype(np.float64)
    top1_parts = partitioning.assignment[ids[:, :1]].astype(np.int64)

    rows: list[SweepRow] = []
    hits: dict[tuple[str, float], np.ndarray] = {}
    mrrs: dict[str, float] = {}
    resolved = [(budget, budget.resolve(n_parts)) for budget in budgets]
    for name, model in zip(names, models):
        ranks = _rank_matrix(q64, model)
        target_rank = np.take_along_axis(ranks, top1_parts, axis=1)[:, 0]
        mrrs[name] = float((1.0 / (target_rank + 1.0)).mean())
        for budget, ell in resolved:
            pct = budget.percent if budget.percent is not None else 100.0 * ell / n_parts
            hits[(name, pct)] = target_rank < ell
        for k in ks:
            parts = partitioning.assignment[ids[:, :k]].astype(np.int64)
            part_ranks = np.take_along_axis(ranks, parts, axis=1)
            for budget, ell in resolved:
                pct = budget.percent if budget.percent is not None else 100.0 * ell / n_parts
                accuracy = float((part_ranks < ell).mean())
                rows.append(
                    SweepRow(
                        model=name,
                        algorithm=partitioning.algorithm,
                        ell_pct=pct,
                        ell_abs=ell,
                        k=k,
                        accuracy=accuracy,
                        n_queries=n_q,
                    )
                )

    report = EvalReport(rows=rows, mrr=mrrs, hits=hits)
    if significance:
        if len(models) != 2:
            raise ValueError("significance testing needs exactly two models")
        for budget, ell in resolved:
            pct = budget.percent if budget.percent is not None else 100.0 * ell / n_parts
            statistic, p_value = mcnemar(hits[(names[0], pct)], hits[(names[1], pct)])
            a, b_arr = hits[(names[0], pct)], hits[(names[1], pct)]
            report.significance.append(
                SignificanceRow(
                    ell_pct=pct,
                    ell_abs=ell,
                    model_a=names[0],
                    model_b=names[1],
                    b=int((a & ~b_arr).sum()),
                    c=int((~a & b_arr).sum()),
                    statistic=statistic,
                    p_value=p_value,
                )
            )
    return report
