"""Clustering-based maximum inner product search with a trainable router."""

from .clustering import (
    ClusteringParams,
    Partitioning,
    assign_point,
    kmeans_shallow,
    kmeans_spherical,
    kmeans_standard,
    load_partitioning,
    save_partitioning,
)
from .data import (
    QuerySet,
    SplitSpec,
    VectorCollection,
    load_queries,
    load_vectors,
    save_queries,
    save_vectors,
    split_queries,
    synth_clustered,
)
from .evaluation import EvalReport, mcnemar, mrr, sweep, topk_accuracy
from .exact import (
    LabeledQuerySet,
    TopKResult,
    build_labels,
    exact_topk,
    load_labels,
    save_labels,
)
from .routing import (
    ProbeBudget,
    RoutingModel,
    baseline_model,
    load_model,
    route,
    save_model,
    score_partitions,
    search,
)
from .training import (
    AdamState,
    GainNoise,
    TrainConfig,
    TrainReport,
    adam_step,
    grad_top1,
    loss_top1,
    loss_topk,
    softmax,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ClusteringParams",
    "Partitioning",
    "assign_point",
    "kmeans_shallow",
    "kmeans_spherical",
    "kmeans_standard",
    "load_partitioning",
    "save_partitioning",
    "QuerySet",
    "SplitSpec",
    "VectorCollection",
    "load_queries",
    "load_vectors",
    "save_queries",
    "save_vectors",
    "split_queries",
    "synth_clustered",
    "EvalReport",
    "mcnemar",
    "mrr",
    "sweep",
    "topk_accuracy",
    "LabeledQuerySet",
    "TopKResult",
    "build_labels",
    "exact_topk",
    "load_labels",
    "save_labels",
    "ProbeBudget",
    "RoutingModel",
    "baseline_model",
    "load_model",
    "route",
    "save_model",
    "score_partitions",
    "search",
    "AdamState",
    "GainNoise",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "grad_top1",
    "loss_top1",
    "loss_topk",
    "softmax",
    "train",
]
