"""Exact top-k inner-product search and routing ground truth.

Scores accumulate in float64 even though vectors are stored as float32, so
different call paths (single query, batched, candidate-restricted) agree on
near-ties. Result order is always (score descending, id ascending).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import Partitioning
from .data import PathLike, QuerySet, VectorCollection, _as_vector_matrix

__all__ = [
    "TopKResult",
    "LabeledQuerySet",
    "exact_topk",
    "exact_topk_batch",
    "top_indices",
    "build_labels",
    "labels_from_ground_truth",
    "save_labels",
    "load_labels",
]


@dataclass(frozen=True, eq=False)
class TopKResult:
    """Ids and scores of the best matches, scores non-increasing."""

    ids: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]


def _bounded_topk(scores: np.ndarray, ids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Select the k best (score desc, id asc) entries without a full sort.

    A partition pass narrows the field to the boundary value, then only the
    survivors are ordered exactly.
    """
    n = scores.shape[0]
    if n == 0 or k >= n:
        order = np.lexsort((ids, -scores))[:k]
    else:
        kth = np.partition(scores, n - k)[n - k]
        pos = np.flatnonzero(scores >= kth)
        sub = np.lexsort((ids[pos], -scores[pos]))[:k]
        order = pos[sub]
    return ids[order], scores[order]


def top_indices(values: np.ndarray, count: int) -> np.ndarray:
    """Indices of the `count` largest values, ordered by (value desc, index asc)."""
    values = np.asarray(values, dtype=np.float64)
    ids, _ = _bounded_topk(values, np.arange(values.shape[0], dtype=np.int64), count)
    return ids


def _query_vector(q: np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.size != dim:
        raise ValueError(f"query has dim {q.size}, expected {dim}")
    if not np.isfinite(q).all():
        raise ValueError("query contains non-finite values")
    return q


def _query_matrix(queries) -> np.ndarray:
    if isinstance(queries, QuerySet):
        return queries.queries
    return np.asarray(queries, dtype=np.float32)


def exact_topk(
    q: np.ndarray,
    collection: VectorCollection,
    k: int,
    candidate_ids: np.ndarray | None = None,
) -> TopKResult:
    """Exact top-k by inner product, optionally restricted to candidate ids.

    Returns fewer than k entries only when the candidate set is smaller
    than k. Candidate ids must be distinct.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = _query_vector(q, collection.dim)
    if candidate_ids is None:
        scores = collection.vectors @ q
        ids = np.arange(collection.count, dtype=np.int64)
    else:
        cand = np.asarray(candidate_ids, dtype=np.int64).reshape(-1)
        if cand.size and (cand.min() < 0 or cand.max() >= collection.count):
            raise ValueError("candidate ids out of range")
        scores = collection.vectors[cand] @ q
        ids = cand
    ids, scores = _bounded_topk(scores, ids, k)
    return TopKResult(ids=ids, scores=scores)


def exact_topk_batch(
    queries,
    collection: VectorCollection,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k ids and scores for every query row.

    Returns (ids, scores) with shape (n_queries, min(k, m)). Each row is
    scored with the same matrix-vector product as exact_topk, so batch and
    single-query results are bit-identical.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q_mat = _query_matrix(queries)
    if q_mat.ndim != 2 or q_mat.shape[1] != collection.dim:
        raise ValueError(
            f"queries must be (n, {collection.dim}), got shape {q_mat.shape}"
        )
    m = collection.count
    k_eff = min(k, m)
    base = np.arange(m, dtype=np.int64)
    n_q = q_mat.shape[0]
    ids = np.empty((n_q, k_eff), dtype=np.int64)
    scores = np.empty((n_q, k_eff), dtype=np.float64)
    for r in range(n_q):
        row = collection.vectors @ q_mat[r].astype(np.float64)
        row_ids, row_scores = _bounded_topk(row, base, k_eff)
        ids[r] = row_ids
        scores[r] = row_scores
    return ids, scores


@dataclass(eq=False)
class LabeledQuerySet:
    """Queries paired with their ground-truth target partitions.

    Each target is the sorted set of partitions holding the query's exact
    top-k neighbours; with k=1 every target has exactly one element.
    """

    queries: np.ndarray
    targets: list[np.ndarray]
    n_partitions: int
    k: int

    def __post_init__(self) -> None:
        self.queries = _as_vector_matrix(self.queries, "query data")
        if self.n_partitions < 1:
            raise ValueError(f"n_partitions must be >= 1, got {self.n_partitions}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if len(self.targets) != self.queries.shape[0]:
            raise ValueError(
                f"{len(self.targets)} targets for {self.queries.shape[0]} queries"
            )
        cleaned = []
        for i, t in enumerate(self.targets):
            t = np.unique(np.asarray(t, dtype=np.int64))
            if t.size == 0:
                raise ValueError(f"query {i} has an empty target set")
            if t.size > min(self.k, self.n_partitions):
                raise ValueError(f"query {i} has more targets than k allows")
            if t[0] < 0 or t[-1] >= self.n_partitions:
                raise ValueError(f"query {i} target partition out of range")
            if self.k == 1 and t.size != 1:
                raise ValueError(f"query {i} must have exactly one target when k=1")
            arr = t.astype(np.uint32)
            arr.flags.writeable = False
            cleaned.append(arr)
        self.targets = cleaned

    @property
    def count(self) -> int:
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]

    def single_targets(self) -> np.ndarray:
        """Targets as a flat int64 vector; errors if any query is multi-label."""
        if any(t.size != 1 for t in self.targets):
            raise ValueError("query set has multi-partition targets")
        return np.array([t[0] for t in self.targets], dtype=np.int64)


def labels_from_ground_truth(
    queries,
    ground_truth_ids: np.ndarray,
    partitioning: Partitioning,
    k: int,
) -> LabeledQuerySet:
    """Map precomputed exact top-k ids to their partitions."""
    q_mat = _query_matrix(queries)
    ids = np.asarray(ground_truth_ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[0] != q_mat.shape[0]:
        raise ValueError("ground-truth ids must be one row per query")
    parts = partitioning.assignment[ids[:, : min(k, ids.shape[1])]]
    targets = [np.unique(row) for row in parts]
    return LabeledQuerySet(
        queries=q_mat, targets=targets, n_partitions=partitioning.n_partitions, k=k
    )


def build_labels(
    queries: QuerySet,
    collection: VectorCollection,
    partitioning: Partitioning,
    k: int = 1,
) -> LabeledQuerySet:
    """Label every query with the partitions of its exact top-k neighbours."""
    if partitioning.count != collection.count:
        raise ValueError(
            f"partitioning covers {partitioning.count} vectors, collection has {collection.count}"
        )
    q_mat = _query_matrix(queries)
    if q_mat.shape[1] != collection.dim:
        raise ValueError(
            f"queries have dim {q_mat.shape[1]}, collection has dim {collection.dim}"
        )
    ids, _ = exact_topk_batch(q_mat, collection, k)
    return labels_from_ground_truth(q_mat, ids, partitioning, k)


# ---------------------------------------------------------------------------
# label files: u32 header (n_q, L, k), then per query a u32 count followed by
# that many u32 partition indices, all little-endian


def save_labels(labeled: LabeledQuerySet, path: PathLike, create_parents: bool = False) -> None:
    path = Path(path)
    if not path.parent.exists():
        if not create_parents:
            raise FileNotFoundError(f"parent directory does not exist: {path.parent}")
        path.parent.mkdir(parents=True, exist_ok=True)
    pieces = [np.array([labeled.count, labeled.n_partitions, labeled.k], dtype="<u4")]
    for t in labeled.targets:
        pieces.append(np.array([t.size], dtype="<u4"))
        pieces.append(t.astype("<u4"))
    np.concatenate(pieces).tofile(path)


def load_labels(path: PathLike, queries) -> LabeledQuerySet:
    """Load a label file and pair it with its query matrix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    raw = np.fromfile(path, dtype="<u4")
    if raw.size < 3:
        raise ValueError(f"{path}: truncated label header")
    n_q, n_parts, k = int(raw[0]), int(raw[1]), int(raw[2])
    targets = []
    pos = 3
    for _ in range(n_q):
        if pos >= raw.size:
            raise ValueError(f"{path}: truncated label records")
        size = int(raw[pos])
        pos += 1
        if pos + size > raw.size:
            raise ValueError(f"{path}: truncated label records")
        targets.append(raw[pos : pos + size])
        pos += size
    if pos != raw.size:
        raise ValueError(f"{path}: trailing bytes after {n_q} label records")
    q_mat = _query_matrix(queries)
    if q_mat.shape[0] != n_q:
        raise ValueError(f"{path}: file has {n_q} labels, query set has {q_mat.shape[0]}")
    return LabeledQuerySet(queries=q_mat, targets=targets, n_partitions=n_parts, k=k)
