"""End-to-end runs of the command-line pipeline."""

import csv
import math

import pytest

from ivfroute.cli import DEFAULT_ELLS, DEFAULT_KS, main
from ivfroute.data import load_queries, load_vectors, read_kv
from ivfroute.routing import load_model


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth -> cluster -> ground-truth -> train once and share the dirs."""
    root = tmp_path_factory.mktemp("pipeline")
    dirs = {name: root / name for name in ("synth", "cluster", "labels", "train")}

    rc = main(
        [
            "synth",
            "--count", "600",
            "--dim", "8",
            "--centers", "8",
            "--spread", "0.2",
            "--queries", "120",
            "--seed", "3",
            "--out-dir", str(dirs["synth"]),
        ]
    )
    assert rc == 0

    rc = main(
        [
            "cluster",
            "--data", str(dirs["synth"] / "data.fbin"),
            "--algo", "standard",
            "--clusters", "10",
            "--seed", "1",
            "--out-dir", str(dirs["cluster"]),
        ]
    )
    assert rc == 0

    rc = main(
        [
            "ground-truth",
            "--data", str(dirs["synth"] / "data.fbin"),
            "--queries", str(dirs["synth"] / "queries.fbin"),
            "--partition", str(dirs["cluster"] / "partition"),
            "--k", "1",
            "--seed", "5",
            "--out-dir", str(dirs["labels"]),
        ]
    )
    assert rc == 0

    rc = main(
        [
            "train",
            "--partition", str(dirs["cluster"] / "partition"),
            "--labels-dir", str(dirs["labels"]),
            "--lr", "0.01",
            "--batch-size", "64",
            "--epochs", "5",
            "--seed", "2",
            "--out-dir", str(dirs["train"]),
        ]
    )
    assert rc == 0
    return dirs


class TestSynth:
    def test_outputs(self, pipeline):
        out = pipeline["synth"]
        data = load_vectors(out / "data.fbin")
        queries = load_queries(out / "queries.fbin")
        assert data.count == 600 and data.dim == 8
        assert queries.count == 120 and queries.dim == 8
        manifest = read_kv(out / "synth.manifest")
        assert manifest["m"] == "600"
        assert manifest["command"] == "synth"

    def test_deterministic_across_runs(self, tmp_path):
        argv = [
            "synth", "--count", "50", "--dim", "4", "--centers", "3",
            "--spread", "0.1", "--seed", "7",
        ]
        assert main(argv + ["--out-dir", str(tmp_path / "a")]) == 0
        assert main(argv + ["--out-dir", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "data.fbin").read_bytes()
        b = (tmp_path / "b" / "data.fbin").read_bytes()
        assert a == b


class TestCluster:
    def test_outputs(self, pipeline):
        out = pipeline["cluster"]
        for suffix in ("partition.reps.fbin", "partition.assign.u32", "partition.meta"):
            assert (out / suffix).exists()
        manifest = read_kv(out / "cluster.manifest")
        assert manifest["L"] == "10"
        assert manifest["algorithm"] == "standard"

    def test_default_partition_count_is_sqrt_m(self, pipeline, tmp_path, capsys):
        rc = main(
            [
                "cluster",
                "--data", str(pipeline["synth"] / "data.fbin"),
                "--algo", "shallow",
                "--out-dir", str(tmp_path),
            ]
        )
        assert rc == 0
        manifest = read_kv(tmp_path / "cluster.manifest")
        assert manifest["L"] == str(round(math.sqrt(600)))

    def test_zero_clusters_is_an_error(self, pipeline, tmp_path, capsys):
        rc = main(
            [
                "cluster",
                "--data", str(pipeline["synth"] / "data.fbin"),
                "--clusters", "0",
                "--out-dir", str(tmp_path),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    @pytest.mark.parametrize("algo", ["spherical", "shallow"])
    def test_other_algorithms_run(self, pipeline, tmp_path, algo):
        rc = main(
            [
                "cluster",
                "--data", str(pipeline["synth"] / "data.fbin"),
                "--algo", algo,
                "--clusters", "8",
                "--out-dir", str(tmp_path / algo),
            ]
        )
        assert rc == 0
        assert read_kv(tmp_path / algo / "cluster.manifest")["algorithm"] == algo


class TestGroundTruth:
    def test_split_sizes(self, pipeline):
        out = pipeline["labels"]
        manifest = read_kv(out / "ground-truth.manifest")
        assert manifest["n_train"] == "72"
        assert manifest["n_val"] == "24"
        assert manifest["n_test"] == "24"
        for split in ("train", "val", "test"):
            assert (out / f"{split}.queries.fbin").exists()
            assert (out / f"{split}.labels").exists()

    def test_bad_split_string(self, pipeline, tmp_path, capsys):
        rc = main(
            [
                "ground-truth",
                "--data", str(pipeline["synth"] / "data.fbin"),
                "--queries", str(pipeline["synth"] / "queries.fbin"),
                "--partition", str(pipeline["cluster"] / "partition"),
                "--splits", "0.9,0.1",
                "--out-dir", str(tmp_path),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_outputs(self, pipeline):
        out = pipeline["train"]
        model = load_model(out / "model")
        assert model.provenance == "learnt"
        assert model.weights.shape == (10, 8)
        with open(out / "training_log.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["epoch", "train_loss", "val_loss"]
        assert len(rows) == 6
        manifest = read_kv(out / "train.manifest")
        assert manifest["loss"] == "top1_ce"
        assert 0 <= int(manifest["best_epoch"]) <= 5

    def test_missing_labels_dir(self, pipeline, tmp_path, capsys):
        rc = main(
            [
                "train",
                "--partition", str(pipeline["cluster"] / "partition"),
                "--labels-dir", str(tmp_path / "nope"),
                "--out-dir", str(tmp_path),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestEval:
    def run_eval(self, pipeline, out_dir, extra):
        argv = [
            "eval",
            "--data", str(pipeline["synth"] / "data.fbin"),
            "--queries", str(pipeline["labels"] / "test.queries.fbin"),
            "--partition", str(pipeline["cluster"] / "partition"),
            "--out-dir", str(out_dir),
        ] + extra
        return main(argv)

    def test_baseline_default_grid(self, pipeline, tmp_path, capsys):
        rc = self.run_eval(pipeline, tmp_path, [])
        assert rc == 0
        assert "baseline" in capsys.readouterr().out
        with open(tmp_path / "eval.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert len(rows) == 1 + len(DEFAULT_ELLS) * len(DEFAULT_KS)

    def test_learnt_model_included(self, pipeline, tmp_path, capsys):
        rc = self.run_eval(
            pipeline, tmp_path, ["--model", str(pipeline["train"] / "model"), "--k", "1"]
        )
        assert rc == 0
        with open(tmp_path / "eval.csv", newline="") as f:
            rows = list(csv.reader(f))
        models = {r[0] for r in rows[1:]}
        assert models == {"baseline", "learnt"}

    def test_significance_written(self, pipeline, tmp_path, capsys):
        rc = self.run_eval(
            pipeline,
            tmp_path,
            [
                "--model", str(pipeline["train"] / "model"),
                "--ell", "20%",
                "--ell", "100%",
                "--k", "1",
                "--significance",
            ],
        )
        assert rc == 0
        with open(tmp_path / "significance.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0][0] == "ell_pct"
        assert len(rows) == 3

    def test_significance_requires_explicit_ell(self, pipeline, tmp_path, capsys):
        rc = self.run_eval(
            pipeline,
            tmp_path,
            ["--model", str(pipeline["train"] / "model"), "--significance"],
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_no_models_is_an_error(self, pipeline, tmp_path, capsys):
        rc = self.run_eval(pipeline, tmp_path, ["--no-baseline"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_data_file(self, pipeline, tmp_path, capsys):
        rc = main(
            [
                "eval",
                "--data", str(tmp_path / "missing.fbin"),
                "--queries", str(pipeline["labels"] / "test.queries.fbin"),
                "--partition", str(pipeline["cluster"] / "partition"),
                "--out-dir", str(tmp_path),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestSweepCommand:
    def test_csv_monotone_per_model(self, pipeline, tmp_path, capsys):
        rc = main(
            [
                "sweep",
                "--data", str(pipeline["synth"] / "data.fbin"),
                "--queries", str(pipeline["labels"] / "test.queries.fbin"),
                "--partition", str(pipeline["cluster"] / "partition"),
                "--model", str(pipeline["train"] / "model"),
                "--ell", "10%", "--ell", "30%", "--ell", "100%",
                "--k", "1",
                "--out-dir", str(tmp_path),
            ]
        )
        assert rc == 0
        with open(tmp_path / "sweep.csv", newline="") as f:
            rows = list(csv.reader(f))[1:]
        by_model = {}
        for r in rows:
            by_model.setdefault(r[0], []).append(float(r[5]))
        for accs in by_model.values():
            assert accs == sorted(accs)
            assert accs[-1] == 1.0
