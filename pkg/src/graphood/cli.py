"""Command-line entry point: ``graphood <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error (including
missing node roles and unreadable dataset files), 4 numerical error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from importlib import metadata

import numpy as np

from . import checks
from .config import METHODS, RunConfig, coerce, field_type
from .errors import ConfigError, DatasetError, GraphOODError, NumericalError
from .graph import GraphDataset, load_dataset, save_dataset
from .metrics import POSITIVE_CLASS
from .model import PARAM_NAMES, ModelParams
from .oodgen import OOD_KINDS, OodSpec, SbmConfig, generate_sbm, make_ood
from .pipeline import LOG_COLUMNS, evaluate, histogram, run, summarize, train

logger = logging.getLogger("graphood")

METRIC_KEYS = ("auroc", "aupr", "fpr95", "id_accuracy")


def version_string() -> str:
    try:
        return "v" + metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "v0.0.0-unknown"


# --------------------------------------------------------------------------
# Small IO helpers


def _read_json(path: str, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _dataclass_from_json(cls, data: dict, what: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


def _load_graph(path: str) -> GraphDataset:
    if not os.path.isdir(path):
        raise DatasetError("dataset directory not found", path)
    return load_dataset(path)


# --------------------------------------------------------------------------
# Run configuration from --config plus per-key flags


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON; flags below override its keys")
    grp = p.add_argument_group("run configuration overrides")
    for f in dataclasses.fields(RunConfig):
        if f.name in ("dataset", "output"):
            continue
        grp.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, default=None, metavar=f.type.upper())


def _run_config(args, base: dict | None = None) -> RunConfig:
    data = dict(base or {})
    if getattr(args, "config", None):
        data.update(_read_json(args.config, "config"))
    for f in dataclasses.fields(RunConfig):
        val = getattr(args, "cfg_" + f.name, None)
        if val is not None:
            data[f.name] = coerce(f.name, field_type(f.name), val)
    return RunConfig.from_dict(data)


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str, state_params: ModelParams, config: RunConfig, best_epoch: int) -> None:
    meta = json.dumps({"config": config.to_dict(paths=False), "best_epoch": best_epoch}, sort_keys=True)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(meta), **state_params.arrays())


def load_checkpoint(path: str):
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k].copy() for k in PARAM_NAMES}
            meta = json.loads(str(npz["meta"]))
    except FileNotFoundError:
        raise DatasetError("checkpoint not found", path) from None
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetError(f"unreadable checkpoint: {exc}", path) from None
    return ModelParams(**arrays), meta


# --------------------------------------------------------------------------
# Report documents


def metrics_document(config: RunConfig, ev) -> dict:
    r = ev.result
    return {
        "method": config.method,
        "seed": config.seed,
        "config": config.to_dict(paths=False),
        "auroc": r.auroc,
        "aupr": r.aupr,
        "fpr95": r.fpr95,
        "id_accuracy": r.id_accuracy,
        "n_id": r.n_id,
        "n_ood": r.n_ood,
        "gamma": r.gamma,
        "score_kind": ev.scores.kind,
        "positive_class": POSITIVE_CLASS,
        "version": version_string(),
    }


def scores_csv(graph: GraphDataset, ev) -> str:
    roles = np.full(graph.num_nodes, "", dtype=object)
    for name, mask in graph.masks.items():
        roles[mask] = name
    rows = [
        (v, repr(float(s)), int(graph.labels[v]), roles[v])
        for v, s in enumerate(ev.scores.values)
    ]
    return _csv_text(("node", "score", "label", "role"), rows)


def histogram_csv(graph: GraphDataset, ev, bins: int) -> str:
    s = ev.scores.values
    rows = histogram(s[graph.test_id], s[graph.test_ood], bins)
    rows = [(repr(a), repr(b), c, d) for a, b, c, d in rows]
    return _csv_text(("bin_left", "bin_right", "count_id", "count_ood"), rows)


def write_evaluation(outdir: str, graph: GraphDataset, config: RunConfig, ev) -> None:
    _write_text(os.path.join(outdir, "metrics.json"), dump_json(metrics_document(config, ev)))
    _write_text(os.path.join(outdir, "scores.csv"), scores_csv(graph, ev))
    _write_text(os.path.join(outdir, "histogram.csv"), histogram_csv(graph, ev, config.bins))


# --------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    cfg = _dataclass_from_json(SbmConfig, _read_json(args.config, "generator config"), "generator config")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    save_dataset(generate_sbm(cfg), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_make_ood(args) -> int:
    data = _read_json(args.spec, "OOD spec") if args.spec else {}
    for key in ("kind", "frac_ood", "avg_degree", "cross_fraction", "lambda_interp", "expose_fraction", "seed"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.random_lambda:
        data["random_lambda"] = True
    if args.held_out is not None:
        data["held_out_classes"] = [int(c) for c in args.held_out.split(",") if c.strip()]
    if "kind" not in data:
        raise ConfigError("make-ood needs --kind or a spec with 'kind'")
    spec = _dataclass_from_json(OodSpec, data, "OOD spec")
    save_dataset(make_ood(_load_graph(args.dataset), spec), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _run_config(args)
    graph = _load_graph(args.dataset)
    state = train(graph, config)
    save_checkpoint(os.path.join(args.out, "checkpoint.npz"), state.best, config, state.best_epoch)
    rows = [[row[k] if k == "epoch" else repr(float(row[k])) for k in LOG_COLUMNS] for row in state.log]
    _write_text(os.path.join(args.out, "train_log.csv"), _csv_text(LOG_COLUMNS, rows))
    msg = f"best epoch {state.best_epoch}, validation loss {state.best_val_loss:.4f}"
    if graph.test_id.any() and graph.test_ood.any():
        ev = evaluate(state.best, graph, config)
        write_evaluation(args.out, graph, config, ev)
        msg += f"; auroc {ev.result.auroc:.4f} fpr95 {ev.result.fpr95:.4f}"
    print(msg)
    return 0


def cmd_evaluate(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    config = _run_config(args, base=meta["config"])
    graph = _load_graph(args.dataset)
    if params.dims != (graph.num_features, params.dims[1], graph.num_classes):
        raise DatasetError(
            f"checkpoint expects {params.dims[0]} features / {params.dims[2]} classes, "
            f"dataset has {graph.num_features} / {graph.num_classes}",
            args.checkpoint,
        )
    ev = evaluate(params, graph, config)
    write_evaluation(args.out, graph, config, ev)
    r = ev.result
    print(f"{config.method} [{ev.scores.kind}] auroc {r.auroc:.4f} aupr {r.aupr:.4f} fpr95 {r.fpr95:.4f} acc {r.id_accuracy:.4f}")
    return 0


def _compare_cell(task):
    path, config = task
    graph = load_dataset(path)
    return run(graph, config).result


def compare_table(rows) -> str:
    header = f"{'method':<14s} {'runs':>4s}  " + "  ".join(f"{k:>17s}" for k in METRIC_KEYS)
    lines = [header]
    for row in rows:
        cells = "  ".join(f"{row[k + '_mean']:>8.4f} ± {row[k + '_std']:<6.4f}" for k in METRIC_KEYS)
        lines.append(f"{row['method']:<14s} {row['runs']:>4d}  {cells}")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    base = _run_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if not methods or not seeds:
        raise ConfigError("compare needs at least one method and one seed")

    _load_graph(args.dataset)  # validate once up front
    tasks = [(args.dataset, base.replace(method=m, seed=s)) for m in methods for s in seeds]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            cells = list(pool.map(_compare_cell, tasks))
    else:
        cells = [_compare_cell(t) for t in tasks]

    results = {m: [] for m in methods}
    for (_, cfg), cell in zip(tasks, cells):
        results[cfg.method].append(cell)
    rows = summarize(results)
    table = compare_table(rows)
    print(table, end="")
    if args.out:
        doc = {"methods": methods, "seeds": seeds, "config": base.to_dict(paths=False), "rows": rows,
               "version": version_string()}
        _write_text(os.path.join(args.out, "compare.json"), dump_json(doc))
        keys = ["method", "runs"] + [f"{k}_{s}" for k in METRIC_KEYS for s in ("mean", "std")]
        _write_text(os.path.join(args.out, "compare.csv"), _csv_text(keys, [[r[k] for k in keys] for r in rows]))
    return 0


def cmd_selfcheck(args) -> int:
    names = args.suite or list(checks.SUITES)
    failed = 0
    for name in names:
        report = checks.SUITES[name]()
        print(report.line())
        failed += not report.ok
    return 1 if failed else 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphood", description="Energy-based OOD detection for graph nodes.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a stochastic block model dataset")
    g.add_argument("config", help="JSON with generator fields (num_blocks, nodes_per_block, p_in, ...)")
    g.add_argument("-o", "--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("make-ood", help="add OOD nodes to a dataset")
    m.add_argument("dataset")
    m.add_argument("-o", "--out", required=True)
    m.add_argument("--spec", help="JSON with OOD construction fields")
    m.add_argument("--kind", choices=OOD_KINDS)
    m.add_argument("--frac-ood", dest="frac_ood", type=float)
    m.add_argument("--avg-degree", dest="avg_degree", type=float)
    m.add_argument("--cross-fraction", dest="cross_fraction", type=float)
    m.add_argument("--lambda-interp", dest="lambda_interp", type=float)
    m.add_argument("--random-lambda", dest="random_lambda", action="store_true")
    m.add_argument("--held-out", dest="held_out", help="comma-separated class ids")
    m.add_argument("--expose-fraction", dest="expose_fraction", type=float)
    m.add_argument("--seed", type=int)
    m.set_defaults(func=cmd_make_ood)

    t = sub.add_parser("train", help="train one method and write a checkpoint")
    t.add_argument("dataset")
    t.add_argument("-o", "--out", required=True)
    _add_run_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a dataset with a checkpoint")
    e.add_argument("dataset")
    e.add_argument("checkpoint")
    e.add_argument("-o", "--out", required=True)
    _add_run_flags(e)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="methods x seeds table of mean and std")
    c.add_argument("dataset")
    c.add_argument("--methods", default=",".join(METHODS))
    c.add_argument("--seeds", default="0,1,2")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("-o", "--out")
    _add_run_flags(c)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("selfcheck", help="gradient, proposition, propagation and metric checks")
    s.add_argument("--suite", action="append", choices=list(checks.SUITES))
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except GraphOODError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NumericalError.exit_code


if __name__ == "__main__":
    sys.exit(main())
