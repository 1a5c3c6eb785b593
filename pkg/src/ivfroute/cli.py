"""Command-line pipeline: synth -> cluster -> ground-truth -> train -> eval/sweep.

Every command writes its artifacts plus a key=value manifest into --out-dir
and exits 0 only once every referenced file exists. All randomness is
controlled by explicit --seed flags.
"""

from __future__ import annotations

import argparse
import contextlib
import math
import sys
import time
from pathlib import Path

from .clustering import (
    ALGORITHMS,
    ClusteringParams,
    kmeans_shallow,
    kmeans_spherical,
    kmeans_standard,
    load_partitioning,
    save_partitioning,
)
from .data import (
    SplitSpec,
    load_queries,
    load_vectors,
    save_queries,
    save_vectors,
    split_indices,
    synth_clustered,
    write_kv,
    QuerySet,
)
from .evaluation import sweep
from .exact import build_labels, load_labels, save_labels
from .routing import ProbeBudget, baseline_model, load_model, save_model
from .training import LOSSES, INITS, TrainConfig, train

DEFAULT_ELLS = ("0.1%", "0.5%", "1%", "2%", "5%", "10%")
DEFAULT_KS = (1, 10)


def _thread_limit(threads: int):
    """Cap BLAS worker threads; 0 leaves the library defaults (auto)."""
    if threads <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, entries: dict[str, object]) -> Path:
    manifest = dict(entries)
    manifest["command"] = command
    manifest["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path = out / f"{command}.manifest"
    write_kv(path, manifest)
    for key, value in manifest.items():
        if key.endswith("_path") and not Path(str(value)).exists():
            raise RuntimeError(f"manifest references a missing file: {value}")
    return path


def cmd_synth(args) -> int:
    out = _out_dir(args)
    data = synth_clustered(args.count, args.dim, args.centers, args.spread, args.seed)
    data_path = out / "data.fbin"
    save_vectors(data, data_path)
    entries: dict[str, object] = {
        "m": args.count,
        "d": args.dim,
        "n_centers": args.centers,
        "spread": args.spread,
        "seed": args.seed,
        "data_path": data_path,
    }
    if args.queries > 0:
        queries = synth_clustered(
            args.queries, args.dim, args.centers, args.spread, args.seed, sample_seed=args.seed + 1
        )
        query_path = out / "queries.fbin"
        save_vectors(queries, query_path)
        entries["n_queries"] = args.queries
        entries["queries_path"] = query_path
    _write_manifest(out, "synth", entries)
    print(f"wrote {data_path}")
    return 0


def cmd_cluster(args) -> int:
    out = _out_dir(args)
    collection = load_vectors(args.data, args.format)
    n_parts = args.clusters if args.clusters is not None else round(math.sqrt(collection.count))
    params = ClusteringParams(
        n_partitions=n_parts,
        max_iters=args.max_iters,
        rel_tol=args.tol,
        seed=args.seed,
    )
    builder = {
        "standard": kmeans_standard,
        "spherical": kmeans_spherical,
        "shallow": kmeans_shallow,
    }[args.algo]
    partitioning = builder(collection, params)
    paths = save_partitioning(partitioning, out / "partition")
    entries: dict[str, object] = {
        "algorithm": args.algo,
        "L": partitioning.n_partitions,
        "m": partitioning.count,
        "d": partitioning.dim,
        "seed": args.seed,
        "max_iters": args.max_iters,
        "rel_tol": args.tol,
    }
    for name, path in paths.items():
        entries[f"{name}_path"] = path
    if partitioning.objective_trace:
        entries["iterations"] = len(partitioning.objective_trace)
        entries["final_objective"] = f"{partitioning.objective_trace[-1]:.6g}"
    _write_manifest(out, "cluster", entries)
    print(f"clustered {collection.count} vectors into {partitioning.n_partitions} partitions")
    return 0


def cmd_ground_truth(args) -> int:
    out = _out_dir(args)
    collection = load_vectors(args.data, args.format)
    queries = load_queries(args.queries, args.format)
    partitioning = load_partitioning(args.partition)
    fracs = [float(f) for f in args.splits.split(",")]
    if len(fracs) != 3:
        raise ValueError(f"--splits needs three comma-separated fractions, got {args.splits!r}")
    spec = SplitSpec(train_frac=fracs[0], val_frac=fracs[1], test_frac=fracs[2], seed=args.seed)
    parts = dict(zip(("train", "val", "test"), split_indices(queries.count, spec)))
    entries: dict[str, object] = {
        "k": args.k,
        "seed": args.seed,
        "splits": args.splits,
        "L": partitioning.n_partitions,
        "n_queries": queries.count,
    }
    for split_name, idx in parts.items():
        subset = QuerySet(queries.queries[idx])
        labeled = build_labels(subset, collection, partitioning, args.k)
        query_path = out / f"{split_name}.queries.fbin"
        label_path = out / f"{split_name}.labels"
        save_queries(subset, query_path)
        save_labels(labeled, label_path)
        entries[f"n_{split_name}"] = subset.count
        entries[f"{split_name}_queries_path"] = query_path
        entries[f"{split_name}_labels_path"] = label_path
    _write_manifest(out, "ground-truth", entries)
    print(f"labeled {queries.count} queries (k={args.k}) across train/val/test")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    partitioning = load_partitioning(args.partition)
    labels_dir = Path(args.labels_dir)
    labeled_train = load_labels(
        labels_dir / "train.labels", load_queries(labels_dir / "train.queries.fbin")
    )
    labeled_val = load_labels(
        labels_dir / "val.labels", load_queries(labels_dir / "val.queries.fbin")
    )
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        seed=args.seed,
        loss=args.loss,
        init=args.init,
    )
    model, report = train(labeled_train, labeled_val, partitioning, config)
    run_id = f"train-seed{args.seed}-{time.strftime('%Y%m%d%H%M%S')}"
    paths = save_model(model, out / "model", run_id=run_id)
    log_path = out / "training_log.csv"
    report.to_csv(log_path)
    entries: dict[str, object] = {
        "run_id": run_id,
        "loss": args.loss,
        "init": args.init,
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "max_epochs": args.epochs,
        "seed": args.seed,
        "best_epoch": report.best_epoch,
        "best_val_loss": f"{report.best_val_loss:.10g}",
        "initial_val_loss": f"{report.initial_val_loss:.10g}",
        "weights_path": paths["weights"],
        "meta_path": paths["meta"],
        "log_path": log_path,
    }
    _write_manifest(out, "train", entries)
    print(
        f"trained {config.max_epochs} epochs; kept snapshot {report.best_epoch} "
        f"(val loss {report.best_val_loss:.6g})"
    )
    return 0


def _run_eval(args, command: str) -> int:
    out = _out_dir(args)
    collection = load_vectors(args.data, args.format)
    queries = load_queries(args.queries, args.format)
    partitioning = load_partitioning(args.partition)
    models = []
    if not args.no_baseline:
        models.append(baseline_model(partitioning))
    if args.model:
        models.append(load_model(args.model))
    if not models:
        raise ValueError("nothing to evaluate: --no-baseline given and no --model")
    if args.significance and not args.ell:
        raise ValueError("--significance requires an explicit --ell")
    budgets = [ProbeBudget.parse(e) for e in (args.ell or list(DEFAULT_ELLS))]
    ks = [int(k) for k in (args.k or list(DEFAULT_KS))]
    report = sweep(
        queries,
        collection,
        partitioning,
        models,
        budgets,
        ks,
        significance=args.significance,
    )
    csv_path = out / f"{command}.csv"
    report.to_csv(csv_path)
    entries: dict[str, object] = {
        "models": ",".join(m.provenance for m in models),
        "ells": ",".join(b.describe() for b in budgets),
        "ks": ",".join(str(k) for k in ks),
        "n_queries": queries.count,
        "csv_path": csv_path,
    }
    for name, value in report.mrr.items():
        entries[f"mrr_{name}"] = f"{value:.6f}"
    if report.significance:
        sig_path = out / "significance.csv"
        report.significance_to_csv(sig_path)
        entries["significance_path"] = sig_path
    _write_manifest(out, command, entries)
    print(report.format_summary())
    return 0


def cmd_eval(args) -> int:
    return _run_eval(args, "eval")


def cmd_sweep(args) -> int:
    return _run_eval(args, "sweep")


def _add_format(parser) -> None:
    parser.add_argument(
        "--format",
        choices=("fbin", "fvecs"),
        default=None,
        help="vector file format (default: infer from suffix, fbin otherwise)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivfroute",
        description="Clustering-based inner-product search with a trainable partition router.",
    )
    parser.add_argument("--threads", type=int, default=0, help="cap BLAS threads (0 = auto)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic clustered vectors")
    p.add_argument("--count", type=int, required=True, help="number of data vectors")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--centers", type=int, default=64, help="mixture components")
    p.add_argument("--spread", type=float, default=0.15, help="per-coordinate noise sigma")
    p.add_argument("--queries", type=int, default=0, help="also draw this many queries")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="partition a vector collection")
    p.add_argument("--data", required=True)
    _add_format(p)
    p.add_argument("--algo", choices=ALGORITHMS, default="standard")
    p.add_argument(
        "--clusters",
        type=int,
        default=None,
        help="partition count L (default: round(sqrt(m)))",
    )
    p.add_argument("--max-iters", type=int, default=25)
    p.add_argument("--tol", type=float, default=1e-4, help="relative objective tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("ground-truth", help="split queries and build exact labels")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True)
    _add_format(p)
    p.add_argument("--partition", required=True, help="partition prefix (e.g. out/partition)")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--splits", default="0.6,0.2,0.2", help="train,val,test fractions")
    p.add_argument("--seed", type=int, default=0, help="split shuffle seed")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ground_truth)

    p = sub.add_parser("train", help="train the routing matrix")
    p.add_argument("--partition", required=True)
    p.add_argument("--labels-dir", required=True, help="output directory of ground-truth")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--loss", choices=LOSSES, default="top1_ce")
    p.add_argument("--init", choices=INITS, default="from_partitioning")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    for name, help_text in (
        ("eval", "evaluate routing models on a query set"),
        ("sweep", "accuracy sweep over probe budgets"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", required=True)
        p.add_argument("--queries", required=True)
        _add_format(p)
        p.add_argument("--partition", required=True)
        p.add_argument("--model", default=None, help="trained model prefix (e.g. out/model)")
        p.add_argument("--no-baseline", action="store_true", help="skip the baseline router")
        p.add_argument(
            "--ell",
            action="append",
            default=None,
            help="probe budget, absolute or N%% (repeatable; default grid "
            + " ".join(DEFAULT_ELLS) + ")",
        )
        p.add_argument(
            "--k",
            action="append",
            default=None,
            help="top-k accuracy depth (repeatable; default 1 and 10)",
        )
        p.add_argument(
            "--significance",
            action="store_true",
            help="McNemar test between the two models at each --ell",
        )
        p.add_argument("--out-dir", required=True)
        p.set_defaults(func=cmd_eval if name == "eval" else cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
