"""Dense vector collections, query sets, and their on-disk formats.

Two binary layouts are supported, both little-endian with float32 payloads:

* ``fbin``: one header of two uint32 values (count, dim) followed by
  ``count * dim`` float32 values in row-major order.
* ``fvecs``: one record per vector, each an int32 dimension prefix followed
  by that many float32 values; every prefix in a file must agree.

``fbin`` is the canonical format (single header, trivially memory-mappable);
``fvecs`` exists for interchange with common ANN benchmark tooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PathLike = str | Path

__all__ = [
    "VectorCollection",
    "QuerySet",
    "SplitSpec",
    "load_vectors",
    "save_vectors",
    "load_queries",
    "save_queries",
    "read_fbin",
    "write_fbin",
    "read_fvecs",
    "write_fvecs",
    "synth_clustered",
    "synth_clustered_labeled",
    "mixture_centers",
    "split_indices",
    "split_queries",
    "read_kv",
    "write_kv",
]


def _as_vector_matrix(arr: np.ndarray, what: str) -> np.ndarray:
    """Copy `arr` into a frozen, C-contiguous float32 matrix after validation."""
    mat = np.array(arr, dtype=np.float32, order="C")
    if mat.ndim != 2:
        raise ValueError(f"{what} must be a 2-D array, got shape {mat.shape}")
    if mat.shape[0] == 0 or mat.shape[1] == 0:
        raise ValueError(f"{what} must have at least one row and one column")
    if not np.isfinite(mat).all():
        raise ValueError(f"{what} contains non-finite values")
    mat.flags.writeable = False
    return mat


@dataclass(frozen=True, eq=False)
class VectorCollection:
    """Immutable collection of m dense d-dimensional float32 vectors.

    Vector ids are implicit row positions 0..m-1.
    """

    vectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vectors", _as_vector_matrix(self.vectors, "vector data"))

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class QuerySet:
    """Immutable set of query vectors, same layout rules as VectorCollection."""

    queries: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "queries", _as_vector_matrix(self.queries, "query data"))

    @property
    def count(self) -> int:
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test fractions plus the shuffle seed."""

    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not 0.0 <= f <= 1.0 for f in fracs):
            raise ValueError(f"split fractions must lie in [0, 1], got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)!r}")


# ---------------------------------------------------------------------------
# binary file formats


def read_fbin(path: PathLike) -> np.ndarray:
    """Read an fbin file into a (count, dim) float32 array."""
    path = Path(path)
    with open(path, "rb") as f:
        header = np.fromfile(f, dtype="<u4", count=2)
        if header.size != 2:
            raise ValueError(f"{path}: truncated fbin header")
        count, dim = int(header[0]), int(header[1])
        if count == 0 or dim == 0:
            raise ValueError(f"{path}: fbin declares zero count or zero dim")
        data = np.fromfile(f, dtype="<f4")
    if data.size != count * dim:
        raise ValueError(
            f"{path}: fbin payload has {data.size} values, header declares {count * dim}"
        )
    return data.reshape(count, dim)


def write_fbin(path: PathLike, mat: np.ndarray) -> None:
    """Write a 2-D float32 array as an fbin file."""
    mat32 = np.ascontiguousarray(mat, dtype="<f4")
    if mat32.ndim != 2:
        raise ValueError(f"fbin payload must be 2-D, got shape {mat32.shape}")
    with open(path, "wb") as f:
        np.array(mat32.shape, dtype="<u4").tofile(f)
        mat32.tofile(f)


def read_fvecs(path: PathLike) -> np.ndarray:
    """Read an fvecs file into a (count, dim) float32 array."""
    path = Path(path)
    raw = np.fromfile(path, dtype="<i4")
    if raw.size == 0:
        raise ValueError(f"{path}: empty fvecs file")
    dim = int(raw[0])
    if dim <= 0:
        raise ValueError(f"{path}: invalid fvecs dimension prefix {dim}")
    if raw.size % (dim + 1) != 0:
        raise ValueError(f"{path}: fvecs file size does not match dimension {dim}")
    recs = raw.reshape(-1, dim + 1)
    if not (recs[:, 0] == dim).all():
        raise ValueError(f"{path}: inconsistent fvecs dimension prefixes")
    return recs[:, 1:].view("<f4").copy()


def write_fvecs(path: PathLike, mat: np.ndarray) -> None:
    """Write a 2-D float32 array as an fvecs file."""
    mat32 = np.ascontiguousarray(mat, dtype="<f4")
    if mat32.ndim != 2:
        raise ValueError(f"fvecs payload must be 2-D, got shape {mat32.shape}")
    n, d = mat32.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = mat32.view("<i4")
    out.tofile(path)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        return "fvecs" if path.suffix == ".fvecs" else "fbin"
    if fmt not in ("fbin", "fvecs"):
        raise ValueError(f"unknown vector file format {fmt!r}")
    return fmt


def _read_matrix(path: PathLike, fmt: str | None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"vector file not found: {path}")
    fmt = _infer_format(path, fmt)
    return read_fbin(path) if fmt == "fbin" else read_fvecs(path)


def _write_matrix(mat: np.ndarray, path: PathLike, fmt: str | None, create_parents: bool) -> None:
    path = Path(path)
    if not path.parent.exists():
        if not create_parents:
            raise FileNotFoundError(f"parent directory does not exist: {path.parent}")
        path.parent.mkdir(parents=True, exist_ok=True)
    fmt = _infer_format(path, fmt)
    if fmt == "fbin":
        write_fbin(path, mat)
    else:
        write_fvecs(path, mat)


def load_vectors(path: PathLike, fmt: str | None = None) -> VectorCollection:
    """Load a VectorCollection; `fmt` is inferred from the suffix when omitted."""
    return VectorCollection(_read_matrix(path, fmt))


def save_vectors(
    collection: VectorCollection,
    path: PathLike,
    fmt: str | None = None,
    create_parents: bool = False,
) -> None:
    _write_matrix(collection.vectors, path, fmt, create_parents)


def load_queries(path: PathLike, fmt: str | None = None) -> QuerySet:
    """Load a QuerySet; `fmt` is inferred from the suffix when omitted."""
    return QuerySet(_read_matrix(path, fmt))


def save_queries(
    queries: QuerySet,
    path: PathLike,
    fmt: str | None = None,
    create_parents: bool = False,
) -> None:
    _write_matrix(queries.queries, path, fmt, create_parents)


# ---------------------------------------------------------------------------
# synthetic clustered data


def mixture_centers(n_centers: int, d: int, seed: int) -> np.ndarray:
    """Unit-norm component means used by the synthetic clustered generator."""
    rng = np.random.default_rng([int(seed), 0])
    centers = rng.standard_normal((n_centers, d))
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def synth_clustered_labeled(
    m: int,
    d: int,
    n_centers: int,
    spread: float,
    seed: int,
    sample_seed: int | None = None,
) -> tuple[VectorCollection, np.ndarray, np.ndarray]:
    """Sample an isotropic Gaussian mixture around unit-norm centers.

    Returns (collection, centers, component labels). Component means depend
    only on (n_centers, d, seed), so passing a different `sample_seed` draws
    fresh points from the same mixture.
    """
    if n_centers < 1 or m < n_centers:
        raise ValueError(f"need m >= n_centers >= 1, got m={m}, n_centers={n_centers}")
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    if spread < 0:
        raise ValueError(f"spread must be non-negative, got {spread}")
    centers = mixture_centers(n_centers, d, seed)
    rng = np.random.default_rng([int(seed if sample_seed is None else sample_seed), 1])
    labels = rng.integers(n_centers, size=m)
    points = centers[labels] + spread * rng.standard_normal((m, d))
    return VectorCollection(points), centers, labels


def synth_clustered(
    m: int,
    d: int,
    n_centers: int,
    spread: float,
    seed: int,
    sample_seed: int | None = None,
) -> VectorCollection:
    """Deterministic clustered test data; see synth_clustered_labeled."""
    return synth_clustered_labeled(m, d, n_centers, spread, seed, sample_seed)[0]


# ---------------------------------------------------------------------------
# query splitting


def split_indices(n_queries: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint, exhaustive (train, val, test) index arrays, sorted ascending.

    Validation and test sizes are floor-rounded; the remainder goes to train.
    """
    if n_queries < 5:
        raise ValueError(f"need at least 5 queries to split, got {n_queries}")
    # the 1e-9 nudge keeps floor() stable when frac * n is an exact integer
    n_val = int(math.floor(spec.val_frac * n_queries + 1e-9))
    n_test = int(math.floor(spec.test_frac * n_queries + 1e-9))
    n_train = n_queries - n_val - n_test
    if min(n_train, n_val, n_test) == 0:
        raise ValueError(
            f"split of {n_queries} queries with fractions "
            f"({spec.train_frac}, {spec.val_frac}, {spec.test_frac}) leaves an empty part"
        )
    perm = np.random.default_rng(spec.seed).permutation(n_queries)
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train : n_train + n_val])
    test = np.sort(perm[n_train + n_val :])
    return train, val, test


def split_queries(queries: QuerySet, spec: SplitSpec) -> tuple[QuerySet, QuerySet, QuerySet]:
    """Split a QuerySet into (train, val, test) per the SplitSpec."""
    train, val, test = split_indices(queries.count, spec)
    q = queries.queries
    return QuerySet(q[train]), QuerySet(q[val]), QuerySet(q[test])


# ---------------------------------------------------------------------------
# small key=value text sidecars


def write_kv(path: PathLike, entries: dict[str, object]) -> None:
    lines = [f"{key}={value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path: PathLike) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metadata file not found: {path}")
    entries: dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: malformed metadata line {line!r}")
        key, value = line.split("=", 1)
        entries[key] = value
    return entries
