import csv
import json
import logging

import numpy as np
import pytest

from sevo.cli import EXIT_INVARIANT, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, git_blob_hash, main

SMALL = ["--set", "synthetic.n_users=60", "--set", "synthetic.n_items=40", "--set", "synthetic.n_clusters=4",
         "--set", "synthetic.seq_len=8"]
FAST = ["--set", "train.dim=8", "--epochs", "2"]


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "log.tsv"
    assert main(["gen-synthetic", *SMALL, "--out", str(path), "--categories", str(tmp_path / "cats.tsv")]) == EXIT_OK
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_toy_log_gives_single_edge(tmp_path):
    log = tmp_path / "toy.tsv"
    log.write_text("0\t0\t1\n0\t1\t2\n")
    out = tmp_path / "g.txt"
    assert main(["build-graph", "--interactions", str(log), "--full", "--out", str(out)]) == EXIT_OK
    assert out.read_text() == "2 1\n0 1 1.0\n"
    stats = json.loads((tmp_path / "g.stats.json").read_text())
    assert stats["nnz"] == 2 and stats["nodes"] == 2


def test_category_graph(tmp_path, data):
    out = tmp_path / "cg.txt"
    args = ["build-graph", "--interactions", str(data), "--categories", str(tmp_path / "cats.tsv"),
            "--source", "categories", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert int(out.read_text().split()[0]) == 40


def test_knn_graph(tmp_path, data):
    np.save(tmp_path / "teacher.npy", np.random.default_rng(0).normal(size=(40, 4)))
    out = tmp_path / "knn.txt"
    args = ["build-graph", "--interactions", str(data), "--source", "knn", "--teacher", str(tmp_path / "teacher.npy"),
            "--k-neighbors", "3", "--out", str(out)]
    assert main(args) == EXIT_OK


def test_parse_error_exit_code(tmp_path, caplog):
    bad = tmp_path / "bad.tsv"
    bad.write_text("0\t1\t1\n0\tx\t2\n")
    with caplog.at_level(logging.ERROR):
        assert main(["build-graph", "--interactions", str(bad), "--out", str(tmp_path / "g.txt")]) == EXIT_VALIDATION
    assert ":2:" in caplog.text


def test_missing_input(tmp_path):
    assert main(["train", "--interactions", str(tmp_path / "none.tsv")]) == EXIT_VALIDATION


def test_train_outputs_and_reproducibility(tmp_path, data):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--interactions", str(data), *FAST, "--out", str(out)]) == EXIT_OK
        runs.append(out)
    for f in ("metrics.csv", "trace.csv", "model.npz", "optimizer_items.json", "optimizer_users.json"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes(), f
    metrics = _rows(runs[0] / "metrics.csv")
    assert {r["metric"] for r in metrics} == {"HR", "NDCG"}
    assert list(metrics[0]) == ["run_id", "seed", "variant", "beta", "layers", "metric", "N", "value"]
    trace = _rows(runs[0] / "trace.csv")
    assert len(trace) == 2 and list(trace[0]) == ["step", "loss", "smoothness", "raw_delta_smoothness",
                                                  "smoothed_delta_smoothness"]
    manifest = json.loads((runs[0] / "manifest.json").read_text())
    assert manifest["inputs"]["interactions"]["blob_sha1"] == git_blob_hash(data)
    assert manifest["config"]["sevo"]["beta"] == 0.99


def test_blob_hash_matches_git(tmp_path):
    path = tmp_path / "f"
    path.write_bytes(b"hello\n")
    assert git_blob_hash(path) == "ce013625030ba8dba906f756967f9e9ca394464a"


def _item_table(out):
    return np.load(out / "model.npz")["items"]


def test_beta_zero_run_equals_baseline(tmp_path, data):
    base, zero = tmp_path / "base", tmp_path / "zero"
    graph = tmp_path / "g.txt"
    assert main(["build-graph", "--interactions", str(data), "--out", str(graph)]) == EXIT_OK
    assert main(["train", "--interactions", str(data), *FAST, "--beta", "0", "--graph", str(graph),
                 "--out", str(zero)]) == EXIT_OK
    assert main(["train", "--interactions", str(data), *FAST, "--beta", "0", "--out", str(base)]) == EXIT_OK
    assert np.array_equal(_item_table(zero), _item_table(base))
    smooth = tmp_path / "smooth"
    assert main(["train", "--interactions", str(data), *FAST, "--graph", str(graph), "--out", str(smooth)]) == EXIT_OK
    assert not np.array_equal(_item_table(smooth), _item_table(base))


def test_iterative_warning(tmp_path, data, caplog):
    with caplog.at_level(logging.WARNING):
        main(["train", "--interactions", str(data), *FAST, "--variant", "iterative", "--beta", "0.6",
              "--out", str(tmp_path / "it")])
    assert "direction-aware" in caplog.text


def test_nan_aborts_with_numerical_exit(tmp_path, data):
    out = tmp_path / "nan"
    with pytest.warns(RuntimeWarning):
        code = main(["train", "--interactions", str(data), *FAST, "--set", "train.init_std=1e200", "--out", str(out)])
    assert code == EXIT_NUMERICAL
    assert "diagnostics" in json.loads((out / "failure.json").read_text())


def test_layer_sweep(tmp_path, data):
    out = tmp_path / "sweep"
    assert main(["train", "--interactions", str(data), *FAST, "--sweep-layers", "0,2", "--out", str(out)]) == EXIT_OK
    assert {r["layers"] for r in _rows(out / "layer_sweep.csv")} == {"0", "2"}


def test_window_sweep(tmp_path, data):
    out = tmp_path / "windows.csv"
    args = ["build-graph", "--interactions", str(data), "--sweep", "2,4", "--slice", "both",
            "--set", "train.epochs=1", "--set", "train.dim=4", "--out", str(out)]
    assert main(args) == EXIT_OK
    rows = _rows(out)
    assert [(r["slice"], r["K"]) for r in rows] == [("first", "2"), ("first", "4"), ("last", "2"), ("last", "4")]


def test_bench_quadratic(tmp_path):
    out = tmp_path / "bench"
    args = ["bench-quadratic", "--set", "benchmark.graphs=2", "--set", "benchmark.nodes=12", "--out", str(out)]
    assert main(args) == EXIT_OK
    rows = _rows(out / "bench_quadratic.csv")
    by = {(r["graph"], r["variant"]): int(r["iterations"]) for r in rows}
    for k in ("0", "1"):
        assert by[k, "rescaled-neumann"] < by[k, "neumann"]


def test_verify_default_and_fault(tmp_path):
    ok = tmp_path / "ok.json"
    assert main(["verify", "--skip-slow", "--out", str(ok)]) == EXIT_OK
    report = json.loads(ok.read_text())
    assert report["passed"] and all(c["passed"] for c in report["checks"])
    bad = tmp_path / "bad.json"
    assert main(["verify", "--fault", "drop-rescale", "--only", "convergence_ordering", "--out", str(bad)]) == EXIT_INVARIANT
    report = json.loads(bad.read_text())
    assert [c["name"] for c in report["checks"] if not c["passed"]] == ["convergence_ordering"]


def test_workers_env_does_not_change_results(tmp_path, data, monkeypatch):
    out1, out2 = tmp_path / "w1", tmp_path / "w3"
    assert main(["train", "--interactions", str(data), *FAST, "--out", str(out1)]) == EXIT_OK
    monkeypatch.setenv("SEVO_NUM_WORKERS", "3")
    assert main(["train", "--interactions", str(data), *FAST, "--out", str(out2)]) == EXIT_OK
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
