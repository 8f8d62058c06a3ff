"""Command-line front end: ``run``, ``sweep``, ``tune``, ``traffic`` and ``plotdata``.

Run configuration files are plain ``key = value`` lines; ``#`` starts a
comment.  Keys are the fields of :class:`~fedsim.engine.FederationConfig`,
the method hyperparameters of :class:`~fedsim.strategies.MethodParams`, and
``out``.  Unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .accounting import DISPLAY_NAMES, average_rank, traffic_bytes, traffic_table
from .engine import (
    ALPHA_GRID,
    CLIENT_GRID,
    DATA_RATIO_GRID,
    LR_GRID,
    SCHEMA_VERSION,
    FederationConfig,
    RunSummary,
    repeat_seeds,
    rounds_csv,
    run_federation,
    summary_json,
)
from .errors import ConfigError, FedSimError
from .models import load_arch
from .strategies import FINE_TUNABLE, STRATEGIES, MethodParams

log = logging.getLogger("fedsim")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

SWEEP_AXES = {
    "clients": CLIENT_GRID,
    "data_ratio": DATA_RATIO_GRID,
    "alpha_label": ALPHA_GRID,
    "learning_rate": LR_GRID,
}

_ENGINE_KEYS = {f.name: f for f in fields(FederationConfig) if f.name != "params"}
_PARAM_KEYS = {f.name: f for f in fields(MethodParams)}
_OPTIONAL_FLOAT = {"pfedme_inner_lr"}
_OPTIONAL_STR = {"shared"}
_INT_TUPLES = {"hidden", "fedme_schedule"}


# ---------------------------------------------------------------------------
# configuration files


def _parse_bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_value(key, text, default):
    if key in _INT_TUPLES:
        if text.lower() in ("", "none") and key == "fedme_schedule":
            return None if text.lower() == "none" else ()
        return tuple(int(p) for p in text.replace(",", " ").split())
    if key in _OPTIONAL_FLOAT:
        return None if text.lower() == "none" else float(text)
    if key in _OPTIONAL_STR:
        return None if text.lower() == "none" else text.upper()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text: str, path="<config>") -> tuple:
    """Parse a run configuration.  Returns ``(FederationConfig, out_dir_or_None, methods)``.

    ``method`` may hold a comma-separated list (used by ``sweep`` and ``tune``);
    the returned config carries the first entry.
    """
    engine_kw, param_kw, out, methods = {}, {}, None, None
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        if key in seen:
            raise ConfigError(f"key {key!r} repeated (first set on line {seen[key]})", lineno, path)
        seen[key] = lineno
        try:
            if key == "out":
                out = value
            elif key == "method":
                methods = [m.strip().lower().replace("-", "_") for m in value.split(",") if m.strip()]
                bad = [m for m in methods if m not in STRATEGIES]
                if bad or not methods:
                    raise ValueError(f"unknown method {', '.join(bad) or value!r}; choose from {', '.join(sorted(STRATEGIES))}")
            elif key in _ENGINE_KEYS:
                engine_kw[key] = _parse_value(key, value, _ENGINE_KEYS[key].default)
            elif key in _PARAM_KEYS:
                param_kw[key] = _parse_value(key, value, _PARAM_KEYS[key].default)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            msg = str(exc)
            if not msg.startswith("unknown key"):
                msg = f"{key}: {msg}"
            raise ConfigError(msg, lineno, path) from None
    methods = methods or [FederationConfig.method]
    cfg = FederationConfig(method=methods[0], params=MethodParams(**param_kw), **engine_kw)
    for m in methods:
        try:
            replace(cfg, method=m).validate()
        except (FedSimError, ValueError) as exc:
            raise ConfigError(str(exc), None, path) from None
    return cfg, out, methods


def format_config(cfg: FederationConfig) -> str:
    """Resolved configuration in the same ``key = value`` syntax."""
    lines = [f"# fedsim {__version__} resolved configuration"]
    d = cfg.to_dict()
    params = d.pop("params")
    for key, value in list(d.items()) + list(params.items()):
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path) -> tuple:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    cfg, out, methods = parse_config(text, str(path))
    return cfg, out, methods, text


# ---------------------------------------------------------------------------
# output helpers


def _resolve_out(flag, cfg_out, fallback):
    return Path(flag or os.environ.get("FEDSIM_OUT") or cfg_out or fallback)


def _resolve_seed(flag, cfg):
    if flag is not None:
        return replace(cfg, seed=flag)
    env = os.environ.get("FEDSIM_SEED")
    if env:
        try:
            return replace(cfg, seed=int(env))
        except ValueError:
            raise ConfigError(f"FEDSIM_SEED must be an integer, got {env!r}") from None
    return cfg


def write_run_outputs(out: Path, summary: RunSummary, config_text: str | None = None, complete=True):
    out.mkdir(parents=True, exist_ok=True)
    if config_text is not None:
        (out / "config.txt").write_text(config_text)
    (out / "config.resolved").write_text(format_config(summary.config))
    (out / "rounds.csv").write_text(rounds_csv(summary))
    doc = json.loads(summary_json(summary))
    doc["complete"] = complete
    (out / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def execute(cfg: FederationConfig, out: Path, repeats=None, config_text=None) -> RunSummary:
    """Run all repeats, persisting whatever finished if one of them fails."""
    if repeats is not None:
        cfg = replace(cfg, repeats=repeats)
    summary = RunSummary(cfg, [])
    for seed in repeat_seeds(cfg.seed, cfg.repeats):
        try:
            summary.runs.append(run_federation(cfg, seed=seed))
        except Exception:
            write_run_outputs(out, summary, config_text, complete=False)
            raise
    write_run_outputs(out, summary, config_text)
    return summary


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg, cfg_out, methods, text = load_config(args.config)
    if len(methods) > 1:
        raise ConfigError("run takes a single method; use sweep for several", None, args.config)
    cfg = _resolve_seed(args.seed, cfg)
    out = _resolve_out(args.out, cfg_out, "results")
    summary = execute(cfg, out, args.repeats, text)
    acc = summary.accuracy
    line = f"{DISPLAY_NAMES[cfg.method]}: {acc}"
    if summary.accuracy_ft is not None:
        line += f"  +FT: {summary.accuracy_ft}"
    print(line)
    print(f"results written to {out}")
    return EXIT_OK


def _axis_values(axis, values):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    if values is None:
        return list(SWEEP_AXES[axis])
    caster = int if axis == "clients" else float
    try:
        parsed = [caster(v) for v in values.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {values!r} for axis {axis}") from None
    if not parsed:
        raise ConfigError("sweep needs at least one value")
    grid = SWEEP_AXES[axis]
    off = [v for v in parsed if not any(math.isclose(v, g, rel_tol=1e-9) for g in grid)]
    if off:
        warnings.warn(f"values {off} for {axis} lie outside the standard grid {list(grid)}", stacklevel=2)
    return parsed


def _value_label(v):
    return repr(v) if isinstance(v, float) else str(v)


def _sub_run(job):
    cfg, out, repeats = job
    summary = execute(cfg, out, repeats)
    return summary.config.method, summary


def run_grid(cfg, methods, axis, values, out: Path, repeats=None, jobs=1) -> dict:
    """One sub-run per (method, value); each writes its own subdirectory."""
    work = []
    for m in methods:
        for v in values:
            sub = replace(cfg, method=m, **{axis: v})
            work.append((sub, out / m / f"{axis}={_value_label(v)}", repeats))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sub_run, work))
    else:
        results = [_sub_run(j) for j in work]
    grid = {}
    for (sub, _, _), (m, summary) in zip(work, results):
        grid[(m, getattr(sub, axis))] = summary
    return grid


def _final_val(summary):
    curve = summary.mean_curve()
    return float(curve[-1]) if curve.size else float("nan")


def sweep_table(grid, methods, axis, values) -> str:
    """Methods (and +FT variants) by axis value, plus an average-rank column."""
    rows = {}
    for m in methods:
        rows[m] = [grid[(m, v)].accuracy.mean for v in values]
        if m in FINE_TUNABLE and all(grid[(m, v)].accuracy_ft is not None for v in values):
            rows[f"{m}+ft"] = [grid[(m, v)].accuracy_ft.mean for v in values]
    ranks = average_rank(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *[f"{axis}={_value_label(v)}" for v in values], "average_rank"])
    for name, accs in rows.items():
        w.writerow([name, *[repr(float(a)) for a in accs], repr(float(ranks[name]))])
    return buf.getvalue()


def best_by_validation(grid, method, values):
    """Axis value with the highest final-round mean validation accuracy (first on ties)."""
    scores = [_final_val(grid[(method, v)]) for v in values]
    finite = [s if np.isfinite(s) else -np.inf for s in scores]
    return values[int(np.argmax(finite))], scores


def cmd_sweep(args) -> int:
    cfg, cfg_out, methods, _ = load_config(args.config)
    cfg = _resolve_seed(args.seed, cfg)
    values = _axis_values(args.axis, args.values)
    out = _resolve_out(args.out, cfg_out, "results")
    grid = run_grid(cfg, methods, args.axis, values, out, args.repeats, args.jobs)
    table = sweep_table(grid, methods, args.axis, values)
    (out / "sweep.csv").write_text(table)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "tool": "fedsim",
        "tool_version": __version__,
        "axis": args.axis,
        "values": values,
        "methods": methods,
        "seed": cfg.seed,
    }
    if args.axis == "learning_rate":
        meta["best_learning_rate"] = {m: best_by_validation(grid, m, values)[0] for m in methods}
    (out / "sweep.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg, cfg_out, methods, _ = load_config(args.config)
    cfg = _resolve_seed(args.seed, cfg)
    values = _axis_values("learning_rate", args.values)
    out = _resolve_out(args.out, cfg_out, "results")
    grid = run_grid(cfg, methods, "learning_rate", values, out, args.repeats, args.jobs)
    report = {"schema_version": SCHEMA_VERSION, "tool": "fedsim", "tool_version": __version__, "methods": {}}
    for m in methods:
        best, scores = best_by_validation(grid, m, values)
        report["methods"][m] = {
            "best_learning_rate": best,
            "grid": [
                {"learning_rate": v, "final_val_acc": s if np.isfinite(s) else None,
                 "test_accuracy": grid[(m, v)].accuracy.mean}
                for v, s in zip(values, scores)
            ],
        }
        print(f"{m}: best learning_rate = {best!r}")
    (out / "tune.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def traffic_csv(arch, k=2, with_bytes=False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["method", "architecture", "params_per_round", "ratio_vs_fedavg", "published", "match"]
    if with_bytes:
        header.append("bytes_per_round_float64")
    w.writerow(header)
    for row in traffic_table(arch, k=k):
        cells = [
            row["method"],
            row["architecture"],
            row["params_per_round"],
            f"{row['ratio_vs_fedavg']:g}",
            "" if row["reference"] is None else row["reference"],
            "" if row["match"] is None else ("yes" if row["match"] else "no"),
        ]
        if with_bytes:
            cells.append(traffic_bytes(row["method"], arch, k))
        w.writerow(cells)
    return buf.getvalue()


def cmd_traffic(args) -> int:
    try:
        arch = load_arch(args.arch)
    except (FedSimError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    text = traffic_csv(arch, args.k, args.bytes)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def plotdata_rows(results_dir) -> list:
    """``(round, method, mean_val_acc)`` for every run found below ``results_dir``."""
    root = Path(results_dir)
    found = sorted(root.rglob("summary.json"))
    curves = []
    for path in found:
        doc = json.loads(path.read_text())
        if "mean_val_acc" not in doc:
            continue
        rel = path.parent.relative_to(root).as_posix()
        curves.append((doc["method"], rel, doc["mean_val_acc"]))
    counts = {}
    for m, _, _ in curves:
        counts[m] = counts.get(m, 0) + 1
    rows = []
    for m, rel, curve in curves:
        label = m if counts[m] == 1 or rel == "." else f"{m}@{rel}"
        for t, v in enumerate(curve):
            rows.append((t, label, v))
    return rows


def cmd_plotdata(args) -> int:
    root = Path(args.results)
    if not root.is_dir():
        raise ConfigError(f"results directory {root} does not exist")
    rows = plotdata_rows(root)
    if not rows:
        raise ConfigError(f"no run summaries found under {root}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "method", "mean_val_acc"])
    for t, label, v in rows:
        w.writerow([t, label, "" if v is None else repr(float(v))])
    target = Path(args.out) if args.out else root / "plotdata.csv"
    target.write_text(buf.getvalue())
    print(f"wrote {len(rows)} rows to {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsim", description="Seeded federated-learning benchmark runs.")
    p.add_argument("--version", action="version", version=f"fedsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_jobs=False):
        sp.add_argument("-c", "--config", required=True, help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="master seed (overrides FEDSIM_SEED and the file)")
        sp.add_argument("--repeats", type=int, help="number of seeded repeats")
        sp.add_argument("--out", help="output directory (overrides FEDSIM_OUT and the file)")
        if with_jobs:
            sp.add_argument("--jobs", type=int, default=1, help="sub-runs executed in parallel processes")

    run = sub.add_parser("run", help="run one configuration")
    common(run)
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run one configuration per value of an axis")
    common(sw, with_jobs=True)
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", help="comma-separated values (default: the standard grid)")
    sw.set_defaults(func=cmd_sweep)

    tu = sub.add_parser("tune", help="pick the learning rate with the best validation accuracy")
    common(tu, with_jobs=True)
    tu.add_argument("--values", help="comma-separated learning rates (default: the standard grid)")
    tu.set_defaults(func=cmd_tune)

    tr = sub.add_parser("traffic", help="per-round communication per method")
    tr.add_argument("--arch", required=True, help="bundled architecture name or .arch file")
    tr.add_argument("--k", type=int, default=2, help="HypCluster cluster count")
    tr.add_argument("--bytes", action="store_true", help="add a float64 byte-count column")
    tr.add_argument("--out", help="also write the CSV here")
    tr.set_defaults(func=cmd_traffic)

    pd = sub.add_parser("plotdata", help="convergence curves from a results directory")
    pd.add_argument("results")
    pd.add_argument("--out", help="CSV path (default: RESULTS/plotdata.csv)")
    pd.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime fault: report with trace, partial results are on disk
        traceback.print_exc()
        print(f"fedsim: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
