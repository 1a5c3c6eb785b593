"""Non-overlapping partitionings of a vector collection.

Three constructions are provided: standard Lloyd KMeans with k-means++
seeding and Euclidean assignment, spherical KMeans whose centroids are
renormalized to unit length after every mean update and whose assignment
maximizes the inner product, and a one-pass "shallow" variant that samples
L distinct data points as representatives and assigns by inner product.

Determinism: centroid accumulation uses numpy reductions (pairwise
summation). Results are reproducible for a fixed numpy build but are not
bit-identical to a serial left-to-right sum, so comparisons against an
independently accumulated reference should allow ~1e-5 on centroids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import PathLike, read_fbin, read_kv, write_fbin, write_kv, VectorCollection

EUCLIDEAN = "euclidean"
INNER_PRODUCT = "inner_product"
METRICS = (EUCLIDEAN, INNER_PRODUCT)

STANDARD = "standard"
SPHERICAL = "spherical"
SHALLOW = "shallow"
ALGORITHMS = (STANDARD, SPHERICAL, SHALLOW)

_DEFAULT_METRIC = {STANDARD: EUCLIDEAN, SPHERICAL: INNER_PRODUCT, SHALLOW: INNER_PRODUCT}

# chunk row count for point-vs-representative score matrices
_CHUNK = 8192

IterationCallback = Callable[[int, np.ndarray, np.ndarray], None]

__all__ = [
    "ClusteringParams",
    "Partitioning",
    "kmeans_standard",
    "kmeans_spherical",
    "kmeans_shallow",
    "assign_point",
    "save_partitioning",
    "load_partitioning",
    "EUCLIDEAN",
    "INNER_PRODUCT",
    "ALGORITHMS",
]


@dataclass(frozen=True)
class ClusteringParams:
    """Knobs shared by the clustering constructions.

    `metric` selects the assignment rule; None picks the per-algorithm
    default (euclidean for standard, inner_product otherwise).
    """

    n_partitions: int
    max_iters: int = 25
    rel_tol: float = 1e-4
    seed: int = 0
    metric: str | None = None

    def __post_init__(self) -> None:
        if self.n_partitions < 1:
            raise ValueError(f"n_partitions must be >= 1, got {self.n_partitions}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rel_tol < 0:
            raise ValueError(f"rel_tol must be >= 0, got {self.rel_tol}")
        if self.metric is not None and self.metric not in METRICS:
            raise ValueError(f"unknown assignment metric {self.metric!r}")

    def resolved_metric(self, algorithm: str) -> str:
        return self.metric if self.metric is not None else _DEFAULT_METRIC[algorithm]


@dataclass(eq=False)
class Partitioning:
    """L representatives plus a full assignment of vector ids to partitions.

    The assignment is the metric-argmax against the final representatives,
    except for the rare points moved by empty-partition repair. Member lists
    are derived from the assignment; every vector id appears in exactly one
    list and lists are sorted ascending.
    """

    representatives: np.ndarray
    assignment: np.ndarray
    algorithm: str
    metric: str
    seed: int = 0
    objective_trace: tuple[float, ...] = ()
    member_lists: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        reps = np.array(self.representatives, dtype=np.float32, order="C")
        if reps.ndim != 2 or reps.shape[0] == 0 or reps.shape[1] == 0:
            raise ValueError(f"representatives must be a non-empty 2-D matrix, got {reps.shape}")
        if not np.isfinite(reps).all():
            raise ValueError("representatives contain non-finite values")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown clustering algorithm {self.algorithm!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown assignment metric {self.metric!r}")
        if self.algorithm == SPHERICAL:
            norms = np.linalg.norm(reps.astype(np.float64), axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("spherical representatives must have unit L2 norm")
        assignment = np.array(self.assignment, dtype=np.uint32)
        if assignment.ndim != 1 or assignment.size == 0:
            raise ValueError("assignment must be a non-empty 1-D array")
        if int(assignment.max()) >= reps.shape[0]:
            raise ValueError("assignment references a partition index out of range")
        reps.flags.writeable = False
        assignment.flags.writeable = False
        self.representatives = reps
        self.assignment = assignment
        order = np.argsort(assignment, kind="stable").astype(np.int64)
        counts = np.bincount(assignment, minlength=reps.shape[0])
        self.member_lists = np.split(order, np.cumsum(counts[:-1]))

    @property
    def n_partitions(self) -> int:
        return self.representatives.shape[0]

    @property
    def dim(self) -> int:
        return self.representatives.shape[1]

    @property
    def count(self) -> int:
        return self.assignment.shape[0]


def _assign_dense(points: np.ndarray, reps: np.ndarray, metric: str) -> np.ndarray:
    """Chunked argmax/argmin assignment; ties go to the lowest partition index."""
    n = points.shape[0]
    out = np.empty(n, dtype=np.uint32)
    if metric == EUCLIDEAN:
        # argmin ||x - c||^2 == argmax 2<x,c> - ||c||^2; drops the ||x||^2 term
        offset = (reps * reps).sum(axis=1)
        for start in range(0, n, _CHUNK):
            chunk = points[start : start + _CHUNK]
            scores = 2.0 * (chunk @ reps.T) - offset
            out[start : start + _CHUNK] = np.argmax(scores, axis=1)
    else:
        for start in range(0, n, _CHUNK):
            chunk = points[start : start + _CHUNK]
            out[start : start + _CHUNK] = np.argmax(chunk @ reps.T, axis=1)
    return out


def _kmeans_pp_init(points: np.ndarray, n_partitions: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding on squared Euclidean distances."""
    n = points.shape[0]
    centers = np.empty((n_partitions, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, n_partitions):
        total = float(d2.sum())
        if total > 0.0:
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, rng.uniform(0.0, total), side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[i] = points[idx]
        np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1), out=d2)
    return centers


def _normalize_rows(mat: np.ndarray, rows: np.ndarray | None = None) -> None:
    sub = mat if rows is None else mat[rows]
    norms = np.linalg.norm(sub, axis=1, keepdims=True)
    np.divide(sub, norms, out=sub, where=norms > 0)
    if rows is not None:
        mat[rows] = sub


def _farthest_member(
    points: np.ndarray, members: np.ndarray, centroid: np.ndarray, metric: str
) -> int:
    rows = points[members]
    if metric == EUCLIDEAN:
        pos = int(np.argmax(((rows - centroid) ** 2).sum(axis=1)))
    else:
        pos = int(np.argmin(rows @ centroid))
    return int(members[pos])


def _repair_empty(
    points: np.ndarray,
    centers: np.ndarray,
    assignment: np.ndarray,
    counts: np.ndarray,
    bad: np.ndarray,
    metric: str,
    spherical: bool,
) -> None:
    """Re-seed each bad partition with the farthest member of the largest one.

    Mutates centers, assignment, and counts in place. The chosen point is
    reassigned to the repaired partition so no partition stays empty.
    """
    for part in np.flatnonzero(bad):
        donor = int(np.argmax(counts))
        members = np.flatnonzero(assignment == donor)
        far = _farthest_member(points, members, centers[donor], metric)
        seed_point = points[far].copy()
        if spherical:
            norm = float(np.linalg.norm(seed_point))
            if norm == 0.0:
                raise ValueError("cannot seed a unit-norm representative from a zero vector")
            seed_point /= norm
        centers[part] = seed_point
        assignment[far] = part
        counts[donor] -= 1
        counts[part] = 1


def _mean_update(points: np.ndarray, assignment: np.ndarray, n_partitions: int):
    counts = np.bincount(assignment, minlength=n_partitions)
    sums = np.empty((n_partitions, points.shape[1]), dtype=np.float64)
    for j in range(points.shape[1]):
        sums[:, j] = np.bincount(assignment, weights=points[:, j], minlength=n_partitions)
    return sums, counts


def _objective(points: np.ndarray, centers: np.ndarray, assignment: np.ndarray, metric: str) -> float:
    matched = centers[assignment]
    if metric == EUCLIDEAN:
        diff = points - matched
        return float((diff * diff).sum())
    return float((points * matched).sum())


def _finalize(
    points: np.ndarray,
    centers: np.ndarray,
    algorithm: str,
    metric: str,
    seed: int,
    trace: tuple[float, ...],
) -> Partitioning:
    """Quantize centers to float32 and recompute a self-consistent assignment."""
    reps32 = centers.astype(np.float32)
    centers64 = reps32.astype(np.float64)
    assignment = _assign_dense(points, centers64, metric)
    counts = np.bincount(assignment, minlength=reps32.shape[0])
    if algorithm != SHALLOW and (counts == 0).any():
        _repair_empty(
            points, centers64, assignment, counts, counts == 0, metric, algorithm == SPHERICAL
        )
        reps32 = centers64.astype(np.float32)
    return Partitioning(
        representatives=reps32,
        assignment=assignment,
        algorithm=algorithm,
        metric=metric,
        seed=seed,
        objective_trace=trace,
    )


def _lloyd(
    collection: VectorCollection,
    params: ClusteringParams,
    algorithm: str,
    on_iteration: IterationCallback | None,
) -> Partitioning:
    n_parts = params.n_partitions
    if n_parts > collection.count:
        raise ValueError(
            f"cannot build {n_parts} partitions from {collection.count} vectors"
        )
    metric = params.resolved_metric(algorithm)
    spherical = algorithm == SPHERICAL
    points = collection.vectors.astype(np.float64)
    rng = np.random.default_rng(params.seed)
    centers = _kmeans_pp_init(points, n_parts, rng)
    if spherical:
        _normalize_rows(centers)
    trace: list[float] = []
    prev: float | None = None
    for it in range(params.max_iters):
        assignment = _assign_dense(points, centers, metric)
        sums, counts = _mean_update(points, assignment, n_parts)
        nonempty = counts > 0
        nxt = np.zeros_like(centers)
        nxt[nonempty] = sums[nonempty] / counts[nonempty, None]
        bad = ~nonempty
        if spherical:
            norms = np.linalg.norm(nxt, axis=1)
            bad |= norms == 0
            keep = ~bad
            nxt[keep] /= norms[keep, None]
        if bad.any():
            _repair_empty(points, nxt, assignment, counts, bad, metric, spherical)
        centers = nxt
        objective = _objective(points, centers, assignment, metric)
        trace.append(objective)
        if on_iteration is not None:
            on_iteration(it, centers.copy(), assignment.copy())
        if prev is not None:
            gain = prev - objective if metric == EUCLIDEAN else objective - prev
            if gain < params.rel_tol * max(abs(prev), 1e-12):
                break
        prev = objective
    return _finalize(points, centers, algorithm, metric, params.seed, tuple(trace))


def kmeans_standard(
    collection: VectorCollection,
    params: ClusteringParams,
    on_iteration: IterationCallback | None = None,
) -> Partitioning:
    """Lloyd KMeans: k-means++ seeding, Euclidean assignment, mean updates.

    Stops after max_iters or when the relative objective improvement drops
    below rel_tol. `on_iteration` receives (iteration, centroids, assignment)
    after every update, before quantization to float32.
    """
    return _lloyd(collection, params, STANDARD, on_iteration)


def kmeans_spherical(
    collection: VectorCollection,
    params: ClusteringParams,
    on_iteration: IterationCallback | None = None,
) -> Partitioning:
    """KMeans whose centroids are unit-normalized after every mean update."""
    return _lloyd(collection, params, SPHERICAL, on_iteration)


def kmeans_shallow(collection: VectorCollection, params: ClusteringParams) -> Partitioning:
    """Sample L distinct data points as representatives; one assignment pass.

    Representatives are bit-exact collection rows, ordered by ascending
    vector id. Partitions may end up empty; there is no repair step.
    """
    if params.n_partitions > collection.count:
        raise ValueError(
            f"cannot sample {params.n_partitions} representatives from {collection.count} vectors"
        )
    metric = params.resolved_metric(SHALLOW)
    rng = np.random.default_rng(params.seed)
    ids = np.sort(rng.choice(collection.count, size=params.n_partitions, replace=False))
    reps = collection.vectors[ids]
    assignment = _assign_dense(collection.vectors.astype(np.float64), reps.astype(np.float64), metric)
    return Partitioning(
        representatives=reps,
        assignment=assignment,
        algorithm=SHALLOW,
        metric=metric,
        seed=params.seed,
    )


def assign_point(x: np.ndarray, partitioning: Partitioning) -> int:
    """Partition index of a single point under the partitioning's metric."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != partitioning.dim:
        raise ValueError(f"point has dim {x.size}, partitioning has dim {partitioning.dim}")
    reps = partitioning.representatives.astype(np.float64)
    return int(_assign_dense(x[None, :], reps, partitioning.metric)[0])


# ---------------------------------------------------------------------------
# persistence: <prefix>.reps.fbin + <prefix>.assign.u32 + <prefix>.meta


def save_partitioning(
    partitioning: Partitioning, prefix: PathLike, create_parents: bool = False
) -> dict[str, Path]:
    """Persist a partitioning under a path prefix; returns the written paths."""
    prefix = Path(prefix)
    if not prefix.parent.exists():
        if not create_parents:
            raise FileNotFoundError(f"parent directory does not exist: {prefix.parent}")
        prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "representatives": prefix.with_name(prefix.name + ".reps.fbin"),
        "assignment": prefix.with_name(prefix.name + ".assign.u32"),
        "meta": prefix.with_name(prefix.name + ".meta"),
    }
    write_fbin(paths["representatives"], partitioning.representatives)
    partitioning.assignment.astype("<u4").tofile(paths["assignment"])
    write_kv(
        paths["meta"],
        {
            "format": "partitioning-v1",
            "L": partitioning.n_partitions,
            "m": partitioning.count,
            "d": partitioning.dim,
            "algorithm": partitioning.algorithm,
            "metric": partitioning.metric,
            "seed": partitioning.seed,
        },
    )
    return paths


def load_partitioning(prefix: PathLike) -> Partitioning:
    """Load a partitioning previously written by save_partitioning."""
    prefix = Path(prefix)
    meta = read_kv(prefix.with_name(prefix.name + ".meta"))
    for key in ("L", "m", "d", "algorithm", "metric", "seed"):
        if key not in meta:
            raise ValueError(f"partitioning metadata is missing key {key!r}")
    reps = read_fbin(prefix.with_name(prefix.name + ".reps.fbin"))
    n_parts, dim = int(meta["L"]), int(meta["d"])
    if reps.shape != (n_parts, dim):
        raise ValueError(
            f"representative matrix shape {reps.shape} does not match metadata ({n_parts}, {dim})"
        )
    assignment = np.fromfile(prefix.with_name(prefix.name + ".assign.u32"), dtype="<u4")
    if assignment.size != int(meta["m"]):
        raise ValueError(
            f"assignment file has {assignment.size} entries, metadata declares {meta['m']}"
        )
    return Partitioning(
        representatives=reps,
        assignment=assignment,
        algorithm=meta["algorithm"],
        metric=meta["metric"],
        seed=int(meta["seed"]),
    )
