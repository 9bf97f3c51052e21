"""Command line entry point: ``sevo <subcommand> [options]``.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 invariant failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import graph as graph_mod
from .harness import benchmark, data, training
from .optim import save_state
from .sparse import ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 1, 2, 3
MANIFEST_VERSION = 1

log = logging.getLogger("sevo")


def git_blob_hash(path):
    """Content hash computed the way ``git hash-object`` does."""
    with open(path, "rb") as fh:
        content = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load_config(args):
    overrides = list(args.set or [])
    for flag, key in getattr(args, "_shortcuts", []):
        value = getattr(args, flag, None)
        if value is not None and not (flag == "slice" and value == "both"):
            overrides.append(f"{key}={value}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    cfg = config_mod.load(args.config, overrides)
    cfg.data.check_exist()
    return cfg


def _interaction_log(cfg):
    if cfg.data.interactions:
        return graph_mod.read_interactions(cfg.data.interactions)
    spec = replace(cfg.synthetic, seed=cfg.seed)
    return data.generate_synthetic(spec)[0]


# -- gen-synthetic -----------------------------------------------------------


def cmd_gen_synthetic(args):
    cfg = _load_config(args)
    spec = replace(cfg.synthetic, seed=cfg.seed)
    log_, labels = data.generate_synthetic(spec)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    graph_mod.write_interactions(args.out, log_)
    if args.categories:
        with open(args.categories, "w", encoding="utf-8", newline="") as fh:
            for item, label in enumerate(labels.tolist()):
                fh.write(f"{item}\t{label}\n")
    log.info("wrote %d interactions for %d users to %s", log_.n_interactions, log_.n_users, args.out)
    return EXIT_OK


# -- build-graph -------------------------------------------------------------


def _graph_source(cfg, args, log_):
    if args.source == "categories":
        if not cfg.data.categories:
            raise ValidationError("--source categories needs data.categories")
        labels = graph_mod.read_categories(cfg.data.categories)
        n = log_.n_items if log_ is not None else max(labels) + 1
        return graph_mod.build_from_categories(labels, n)
    if args.source == "knn":
        if not args.teacher:
            raise ValidationError("--source knn needs --teacher embeddings (.npy)")
        teacher = np.load(args.teacher)
        return graph_mod.build_knn_from_embeddings(teacher, graph_mod.KnnGraphConfig(args.k_neighbors, args.bandwidth))
    return graph_mod.build_from_sequences(log_, cfg.graph)


def cmd_build_graph(args):
    cfg = _load_config(args)
    log_ = _interaction_log(cfg)
    base = log_ if args.full else data.leave_one_out(log_).train
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)

    if args.sweep:
        windows = [int(k) for k in args.sweep.split(",")]
        slices = ("first", "last") if args.slice == "both" else (cfg.graph.slice,)
        split = data.leave_one_out(log_)
        rows = training.window_sweep(split, windows, cfg.train_config(), cfg.optimizer_config(), slices, cfg.graph)
        Ns = cfg.train.Ns
        header = ["slice", "K", "nnz"] + [f"{m}@{n}" for n in Ns for m in ("HR", "NDCG")]
        graph_mod.write_csv(
            args.out, header,
            [[sl, K, nnz] + [m[f"{k}@{n}"] for n in Ns for k in ("HR", "NDCG")] for sl, K, nnz, m in rows],
        )
        log.info("wrote window sweep (%d rows) to %s", len(rows), args.out)
        return EXIT_OK

    if args.slice == "both":
        raise ValidationError("--slice both is only meaningful with --sweep")
    g = _graph_source(cfg, args, base)
    graph_mod.save_graph(args.out, g)
    stats = graph_mod.graph_stats(g)
    stats["source"] = args.source
    stats["similarity"] = cfg.graph.to_dict()
    stats_path = args.stats or os.path.splitext(args.out)[0] + ".stats.json"
    _write_json(stats_path, stats)
    log.info("graph: %d nodes, %d stored entries -> %s", stats["nodes"], stats["nnz"], args.out)
    return EXIT_OK


# -- train -------------------------------------------------------------------


def _metric_rows(run_id, seed, sevo, metrics, Ns):
    rows = []
    for n in Ns:
        for metric in ("HR", "NDCG"):
            rows.append([run_id, seed, sevo.variant, sevo.beta, sevo.layers, metric, n, metrics[f"{metric}@{n}"]])
    return rows


def _run_id(cfg):
    """Config digest that ignores where outputs are written."""
    tree = cfg.to_dict()
    tree.pop("output_dir")
    return hashlib.sha256(json.dumps(tree, sort_keys=True).encode()).hexdigest()[:12]


METRIC_HEADER = ["run_id", "seed", "variant", "beta", "layers", "metric", "N", "value"]
TRACE_HEADER = ["step", "loss", "smoothness", "raw_delta_smoothness", "smoothed_delta_smoothness"]


def cmd_train(args):
    cfg = _load_config(args)
    log_ = _interaction_log(cfg)
    split = data.leave_one_out(log_)
    g = graph_mod.load_graph(cfg.data.graph) if cfg.data.graph else graph_mod.build_from_sequences(split.train, cfg.graph)
    if g.n_nodes != log_.n_items:
        raise ValidationError(f"graph has {g.n_nodes} nodes but the data has {log_.n_items} items")
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    tcfg, ocfg = cfg.train_config(), cfg.optimizer_config()
    run_id = _run_id(cfg)

    if args.sweep_layers:
        layers = [int(x) for x in args.sweep_layers.split(",")]
        rows = []
        for L, metrics in training.layer_sweep(split, g, tcfg, ocfg, layers):
            rows += _metric_rows(run_id, cfg.seed, replace(cfg.sevo, layers=L), metrics, tcfg.Ns)
        graph_mod.write_csv(os.path.join(out, "layer_sweep.csv"), METRIC_HEADER, rows)
        return EXIT_OK

    try:
        result = training.train(split, g, tcfg, ocfg)
    except training.NumericalError as exc:
        _write_json(os.path.join(out, "failure.json"), {"error": str(exc), "diagnostics": exc.diagnostics})
        log.error("%s; diagnostics: %s", exc, exc.diagnostics)
        return EXIT_NUMERICAL

    graph_mod.write_csv(
        os.path.join(out, "metrics.csv"), METRIC_HEADER,
        _metric_rows(run_id, cfg.seed, cfg.sevo, result.test_metrics, tcfg.Ns),
    )
    graph_mod.write_csv(
        os.path.join(out, "trace.csv"), TRACE_HEADER, [[row[k] for k in TRACE_HEADER] for row in result.history]
    )
    for name, opt in result.optimizers.items():
        save_state(os.path.join(out, f"optimizer_{name}.json"), opt.state, ocfg)
    np.savez(os.path.join(out, "model.npz"), users=result.model.user_embeddings, items=result.model.item_embeddings)
    inputs = {
        name: {"path": path, "blob_sha1": git_blob_hash(path)}
        for name, path in (("interactions", cfg.data.interactions), ("graph", cfg.data.graph), ("categories", cfg.data.categories))
        if path
    }
    _write_json(
        os.path.join(out, "manifest.json"),
        {
            "version": MANIFEST_VERSION,
            "run_id": run_id,
            "config": cfg.to_dict(),
            "inputs": inputs,
            "best_epoch": result.best_epoch,
            "test_metrics": result.test_metrics,
            "skipped_users": result.test_metrics.get("skipped", 0),
        },
    )
    with open(os.path.join(out, "config.yaml"), "w", encoding="utf-8") as fh:
        fh.write(config_mod.dumps(cfg))
    log.info("NDCG@10 = %.4f (run %s)", result.test_metrics.get("NDCG@10", float("nan")), run_id)
    return EXIT_OK


# -- bench-quadratic ---------------------------------------------------------


def cmd_bench_quadratic(args):
    cfg = _load_config(args)
    b = cfg.benchmark
    rng = np.random.default_rng(cfg.seed)
    variants = args.variants.split(",")
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    rows, traces = [], []
    for k in range(b.graphs):
        g = graph_mod.random_graph(b.nodes, rng, density=b.density)
        for v in variants:
            res = benchmark.quadratic_benchmark(
                g, cfg.sevo, v, lr=b.lr, dense_lr=b.dense_lr, threshold=b.threshold,
                max_iter=b.max_iter, dim=b.dim, seed=cfg.seed + k,
            )
            rows.append([k, v, cfg.sevo.beta, cfg.sevo.layers, res.status, res.iterations])
            traces += [[k, v, step, loss] for step, loss in enumerate(res.trace)]
    graph_mod.write_csv(os.path.join(out, "bench_quadratic.csv"), ["graph", "variant", "beta", "layers", "status", "iterations"], rows)
    graph_mod.write_csv(os.path.join(out, "bench_traces.csv"), ["graph", "variant", "step", "loss"], traces)
    for row in rows:
        log.info("graph %d %-17s %-9s %d", row[0], row[1], row[4], row[5])
    return EXIT_OK


# -- verify ------------------------------------------------------------------


def cmd_verify(args):
    from . import verify

    seed = 0 if args.seed is None else args.seed
    only = set(args.only.split(",")) if args.only else None
    passed, verdicts = verify.run_suite(seed=seed, fault=args.fault, slow=not args.skip_slow, only=only)
    report = {"passed": passed, "fault": args.fault, "seed": seed, "checks": verdicts}
    if args.out:
        _write_json(args.out, report)
    else:
        json.dump(report, sys.stdout, indent=2, default=_json_default)
        sys.stdout.write("\n")
    for v in verdicts:
        log.info("%s %s", "PASS" if v["passed"] else "FAIL", v["name"])
    return EXIT_OK if passed else EXIT_INVARIANT


# -- parser ------------------------------------------------------------------


def _common(p, shortcuts=()):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. sevo.beta=0.5")
    p.add_argument("--seed", type=int)
    p.set_defaults(_shortcuts=list(shortcuts))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sevo", description="Graph-smoothed embedding optimizers: data, graphs, training and checks."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic clustered interaction TSV")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--categories", help="also write item<TAB>cluster labels here")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-graph", help="build an item graph and its stats")
    shortcuts = [("interactions", "data.interactions"), ("categories", "data.categories"), ("window", "graph.window"),
                 ("slice", "graph.slice"), ("max_walk", "graph.max_walk"), ("weighting", "graph.weighting")]
    _common(p, shortcuts)
    p.add_argument("--interactions")
    p.add_argument("--categories")
    p.add_argument("--source", choices=("sequences", "categories", "knn"), default="sequences")
    p.add_argument("--teacher", help="teacher embeddings (.npy) for --source knn")
    p.add_argument("--k-neighbors", type=int, default=10)
    p.add_argument("--bandwidth", type=float, default=1.0)
    p.add_argument("--window", type=int)
    p.add_argument("--slice", choices=("first", "last", "both"))
    p.add_argument("--max-walk", dest="max_walk", type=int)
    p.add_argument("--weighting", choices=graph_mod.WEIGHTINGS)
    p.add_argument("--full", action="store_true", help="use whole sequences, not only the training part")
    p.add_argument("--sweep", metavar="K1,K2,...", help="train per window size and write a comparison CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train MF-BPR with a SEvo-enhanced optimizer")
    shortcuts = [("interactions", "data.interactions"), ("graph", "data.graph"), ("out", "output_dir"),
                 ("beta", "sevo.beta"), ("layers", "sevo.layers"), ("variant", "sevo.variant"),
                 ("optimizer", "train.optimizer"), ("epochs", "train.epochs")]
    _common(p, shortcuts)
    p.add_argument("--interactions")
    p.add_argument("--graph")
    p.add_argument("--out")
    p.add_argument("--beta", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--variant", choices=("exact", "iterative", "neumann", "rescaled-neumann"))
    p.add_argument("--optimizer", choices=("adamw", "adam", "sgd"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--sweep-layers", metavar="L1,L2,...")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench-quadratic", help="convergence benchmark on a separable quadratic")
    _common(p, [("beta", "sevo.beta"), ("layers", "sevo.layers"), ("out", "output_dir")])
    p.add_argument("--beta", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--variants", default="rescaled-neumann,neumann")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_quadratic)

    p = sub.add_parser("verify", help="run the invariant suite and print a JSON verdict")
    p.add_argument("--seed", type=int)
    p.add_argument("--fault", choices=("none", "drop-rescale"), default="none")
    p.add_argument("--skip-slow", action="store_true", help="skip the training and timing checks")
    p.add_argument("--only", help="comma-separated check names, e.g. idle_node,convergence_ordering")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except training.NumericalError as exc:
        log.error("%s; diagnostics: %s", exc, exc.diagnostics)
        return EXIT_NUMERICAL
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
