"""Command-line interface: ERC experiments, training, evaluation and (s, C) sweeps.

Exit codes: 0 success, 1 numeric failure, 2 usage or configuration error.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__
from .data import load_dataset, save_csv, write_csv, split, subsample_to_min, synth_multitask
from .errors import ConfigError, LpMtlError, NumericError, UnsupportedExponent
from .kernels import KernelSpec, build_gram, check_bound_assumption
from .mkl import train_mkl
from .mtl import MtlModel, accuracy, objective_value, train
from .norms import parse_exponent
from .rademacher import (
    ASSUMPTION_VIOLATED,
    ErcParams,
    erc_bound,
    erc_multi_kernel,
    erc_single_kernel,
    sigma_quadratic_forms,
)

logger = logging.getLogger("lpmtl")

DEFAULT_S_GRID = (1.0, 4.0 / 3.0, 2.0, 4.0, 10.0, 100.0)
DEFAULT_C_GRID = tuple(3.0**k for k in range(-4, 5))
DEFAULT_ERC_S_GRID = (1.0, 4.0 / 3.0, 2.0, 4.0, 100.0, math.inf)

ERC_COLUMNS = ["s", "r", "estimate", "std_error", "bound", "bound_value", "branch", "tau", "rho", "excluded"]
SWEEP_COLUMNS = ["s", "r", "C", "kernel", "repeat", "mean_task_accuracy", "objective", "status"]
SUMMARY_COLUMNS = ["s", "r", "kernel", "best_C", "best_mean_accuracy", "repeats"]
SWEEP_VERSION = 1


class UsageError(LpMtlError):
    pass


# ---------------------------------------------------------------------------
# formatting helpers
# ---------------------------------------------------------------------------


def fmt(x):
    """Stable text form of a number: repr for floats, 'inf' for infinity, '' for None."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _json_value(x):
    if isinstance(x, float) and not math.isfinite(x):
        return fmt(x)
    if isinstance(x, (np.floating,)):
        return _json_value(float(x))
    return x


def _dump_json(obj, fh):
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return _json_value(o)

    json.dump(clean(obj), fh, indent=2, sort_keys=True)
    fh.write("\n")


def _write_rows(path, columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    _emit(path, buf.getvalue())


def _emit(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _check_keys(cfg, allowed, what):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {what} config keys: {sorted(unknown)}")


def _exponent(value, name):
    try:
        return parse_exponent(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"invalid {name}: {exc}") from None


def _grid(values, name):
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"{name} must be a non-empty list")
    return [_exponent(v, name) for v in values]


def _positive_grid(values, name):
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"{name} must be a non-empty list")
    out = []
    for v in values:
        try:
            x = float(Fraction(v)) if isinstance(v, str) else float(v)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"invalid {name} entry {v!r}") from None
        if not x > 0 or math.isinf(x):
            raise ConfigError(f"{name} entries must be positive and finite")
        out.append(x)
    return out


def _kernels(cfg):
    if "kernels" in cfg:
        specs = cfg["kernels"]
        if not isinstance(specs, list) or not specs:
            raise ConfigError("kernels must be a non-empty list")
    elif "kernel" in cfg:
        specs = [cfg["kernel"]]
    else:
        specs = [{"kind": "gaussian", "spread": 1.0}]
    return [KernelSpec.from_dict(k) for k in specs]


def _load(args):
    if not args.dataset:
        raise UsageError("--dataset is required")
    data = load_dataset(args.dataset)
    if getattr(args, "subsample_to_min", False):
        data = subsample_to_min(data, seed=args.seed if args.seed is not None else 0)
    return data


def _seed(args, cfg, default=0):
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", default))


# ---------------------------------------------------------------------------
# erc-estimate / erc-bound
# ---------------------------------------------------------------------------


def cmd_erc(args):
    cfg = _read_config(args.config)
    _check_keys(cfg, {"kernel", "kernels", "s_grid", "r", "R", "samples", "seed"}, "erc")
    data = _load(args)
    specs = _kernels(cfg)
    s_grid = _grid(cfg.get("s_grid", list(DEFAULT_ERC_S_GRID)), "s_grid")
    r = _exponent(cfg["r"], "r") if cfg.get("r") is not None else None
    if len(specs) > 1 and r is None:
        r = 1.0
    R = float(cfg.get("R", 1.0))
    D = int(args.samples if args.samples is not None else cfg.get("samples", 1000))
    seed = _seed(args, cfg)
    gram = build_gram(data, specs)
    ok = check_bound_assumption(gram)
    if not ok:
        logger.warning("k(x, x) > 1 for some sample: bounds are reported as %s", ASSUMPTION_VIOLATED)
    # common random numbers: one set of sigma samples for the whole s grid
    forms = sigma_quadratic_forms(gram, seed, D, workers=args.workers)
    rows, per_sample = [], {}
    for s in s_grid:
        params = ErcParams(s=s, r=r, R=R, num_samples=D, seed=seed)
        row = {"s": s, "r": r}
        try:
            if r is None:
                rep = erc_single_kernel(gram, params, ok, forms=forms, keep_samples=True)
            else:
                rep = erc_multi_kernel(gram, params, ok, forms=forms, keep_samples=True)
            row.update(rep.to_dict())
            per_sample[s] = rep.per_sample
        except UnsupportedExponent:
            bound, branch, tau, rho = erc_bound(gram.num_tasks, gram.task_sizes[0], gram.num_kernels, params, ok)
            value = erc_bound(gram.num_tasks, gram.task_sizes[0], gram.num_kernels, params, True)[0]
            row.update({"bound": bound, "bound_value": value, "branch": branch, "tau": tau, "rho": rho})
        rows.append(row)
    meta = {
        "T": gram.num_tasks,
        "N": gram.task_sizes[0],
        "M": gram.num_kernels,
        "D": D,
        "seed": seed,
        "R": R,
        "assumption_ok": ok,
        "kernels": [k.to_dict() for k in specs],
    }
    if args.out and args.out.endswith(".json"):
        buf = io.StringIO()
        _dump_json({"version": SWEEP_VERSION, "meta": meta, "rows": rows}, buf)
        _emit(args.out, buf.getvalue())
    else:
        _write_rows(args.out, ERC_COLUMNS, rows)
    if args.per_sample:
        cols = [fmt(s) for s in per_sample]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sample"] + [f"s={c}" for c in cols])
        n = max((len(v) for v in per_sample.values()), default=0)
        for d in range(n):
            writer.writerow([d] + [fmt(v[d]) if d < len(v) else "" for v in per_sample.values()])
        _emit(args.per_sample, buf.getvalue())
    return 0


def cmd_erc_bound(args):
    cfg = _read_config(args.config)
    _check_keys(cfg, {"s", "r", "R", "T", "N", "M"}, "erc-bound")
    T = args.tasks if args.tasks is not None else cfg.get("T")
    N = args.size if args.size is not None else cfg.get("N")
    M = args.kernels if args.kernels is not None else cfg.get("M", 1)
    s = args.s if args.s is not None else cfg.get("s")
    if T is None or N is None or s is None:
        raise UsageError("erc-bound needs T, N and s")
    r = args.r if args.r is not None else cfg.get("r")
    r = None if r is None else _exponent(r, "r")
    params = ErcParams(s=_exponent(s, "s"), r=r, R=float(args.radius or cfg.get("R", 1.0)), num_samples=1)
    try:
        bound, branch, tau, rho = erc_bound(int(T), int(N), int(M), params, True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = {
        "s": params.s,
        "r": r,
        "R": params.R,
        "T": int(T),
        "N": int(N),
        "M": int(M),
        "bound": bound,
        "branch": branch,
        "tau": tau,
        "rho": rho,
    }
    buf = io.StringIO()
    _dump_json(out, buf)
    _emit(args.out, buf.getvalue())
    return 0


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


TRAIN_KEYS = {"kernel", "kernels", "s", "r", "C", "max_outer", "tol"}


def _train_from_config(data, cfg, gram=None):
    specs = _kernels(cfg)
    s = _exponent(cfg.get("s", 1.0), "s")
    C = _positive_grid([cfg.get("C", 1.0)], "C")[0]
    extra = {k: cfg[k] for k in ("max_outer", "tol") if k in cfg}
    if len(specs) > 1 or cfg.get("r") is not None:
        r = _exponent(cfg.get("r", 1.0), "r")
        if s > 2.0:
            extra.pop("max_outer", None)
        return train_mkl(data, specs, s, r, C, gram=gram, **extra)
    return train(data, specs[0], s, C, gram=gram, **extra)


def cmd_train(args):
    cfg = _read_config(args.config)
    _check_keys(cfg, TRAIN_KEYS, "train")
    data = _load(args)
    model = _train_from_config(data, cfg)
    if not model.converged:
        logger.warning("training stopped before the convergence test was met")
    buf = io.StringIO()
    _dump_json(model.to_dict(), buf)
    _emit(args.out, buf.getvalue())
    return 0


def cmd_eval(args):
    if not args.model:
        raise UsageError("--model is required")
    model = MtlModel.load(args.model)
    data = _load(args)
    if data.num_tasks != model.num_tasks:
        raise ConfigError(f"model has {model.num_tasks} tasks, dataset has {data.num_tasks}")
    accs, mean = accuracy(model, data)
    out = {
        "tasks": [{"name": t.name, "accuracy": a, "size": t.size} for t, a in zip(data.tasks, accs)],
        "mean_task_accuracy": mean,
        "objective": objective_value(model, data),
    }
    buf = io.StringIO()
    _dump_json(out, buf)
    _emit(args.out, buf.getvalue())
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


SWEEP_KEYS = {"s_grid", "C_grid", "r", "kernels", "kernel", "mkl", "repeats", "train_fraction", "seed", "max_outer", "tol"}


def sweep_plan(cfg):
    _check_keys(cfg, SWEEP_KEYS, "sweep")
    specs = _kernels(cfg)
    mkl = bool(cfg.get("mkl", False))
    plan = {
        "s_grid": _grid(cfg.get("s_grid", list(DEFAULT_S_GRID)), "s_grid"),
        "C_grid": _positive_grid(cfg.get("C_grid", list(DEFAULT_C_GRID)), "C_grid"),
        "r": _exponent(cfg.get("r", 1.0), "r") if mkl else None,
        "repeats": int(cfg.get("repeats", 1)),
        "train_fraction": float(cfg.get("train_fraction", 0.5)),
        "kernel_groups": [specs] if mkl else [[k] for k in specs],
        "extra": {k: cfg[k] for k in ("max_outer", "tol") if k in cfg},
    }
    if plan["repeats"] < 1:
        raise ConfigError("repeats must be >= 1")
    if not 0.0 < plan["train_fraction"] < 1.0:
        raise ConfigError("train_fraction must lie in (0, 1)")
    return plan


def _group_label(specs):
    if len(specs) == 1:
        return specs[0].label
    return "mkl[" + "+".join(k.label for k in specs) + "]"


def _cell_key(s, r, C, kernel, repeat):
    return (fmt(s), fmt(r), fmt(C), kernel, str(int(repeat)))


def _run_group(job):
    """Train every pending (s, C) cell of one (kernel group, repeat) pair."""
    data, specs, plan, seed, repeat, pending = job
    label = _group_label(specs)
    train_part, test_part = split(data, plan["train_fraction"], seed=seed + 7919 * repeat)
    gram = build_gram(train_part, specs)
    rows, timings = [], []
    for s, C in pending:
        cfg = {"kernels": [k.to_dict() for k in specs], "s": s, "C": C, **plan["extra"]}
        if plan["r"] is not None:
            cfg["r"] = plan["r"]
        row = {"s": s, "r": plan["r"], "C": C, "kernel": label, "repeat": repeat}
        start = time.perf_counter()
        try:
            model = _train_from_config(train_part, cfg, gram=gram)
            row["mean_task_accuracy"] = accuracy(model, test_part)[1]
            row["objective"] = objective_value(model)
            row["status"] = "ok" if model.converged else "not-converged"
        except (LpMtlError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            row["status"] = f"error: {type(exc).__name__}: {exc}"
        rows.append(row)
        timings.append((_cell_key(s, plan["r"], C, label, repeat), time.perf_counter() - start))
    return rows, timings


def _read_previous(path):
    done = {}
    if not path or path == "-" or not os.path.exists(path):
        return done
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SWEEP_COLUMNS:
            raise ConfigError(f"{path} is not a sweep result file; refusing to resume from it")
        for row in reader:
            key = (row["s"], row["r"], row["C"], row["kernel"], row["repeat"])
            done[key] = row
    return done


def _parse_row(row):
    out = dict(row)
    for k in ("s", "r", "C", "mean_task_accuracy", "objective"):
        out[k] = float(row[k]) if row[k] not in ("", None) else None
    out["repeat"] = int(row["repeat"])
    return out


def best_over_C(rows, plan):
    """Per (s, kernel): the C with the highest accuracy averaged over repeats."""
    summary = []
    labels = [_group_label(g) for g in plan["kernel_groups"]]
    for label in labels:
        for s in plan["s_grid"]:
            best = None
            for C in plan["C_grid"]:
                accs = [
                    r["mean_task_accuracy"]
                    for r in rows
                    if r["kernel"] == label and fmt(r["s"]) == fmt(s) and fmt(r["C"]) == fmt(C)
                    and r.get("mean_task_accuracy") is not None
                ]
                if len(accs) != plan["repeats"]:
                    continue
                mean = float(np.mean(accs))
                if best is None or mean > best[1]:
                    best = (C, mean)
            summary.append(
                {
                    "s": s,
                    "r": plan["r"],
                    "kernel": label,
                    "best_C": None if best is None else best[0],
                    "best_mean_accuracy": None if best is None else best[1],
                    "repeats": plan["repeats"],
                }
            )
    return summary


def run_sweep(data, plan, seed, workers=1, previous=None):
    """Run (or finish) a sweep; returns (rows in grid order, timings)."""
    previous = previous or {}
    jobs, order = [], []
    for specs in plan["kernel_groups"]:
        label = _group_label(specs)
        for repeat in range(plan["repeats"]):
            pending = []
            for s in plan["s_grid"]:
                for C in plan["C_grid"]:
                    key = _cell_key(s, plan["r"], C, label, repeat)
                    order.append(key)
                    if key not in previous:
                        pending.append((s, C))
            if pending:
                jobs.append((data, specs, plan, seed, repeat, pending))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_group, jobs))
    else:
        results = [_run_group(job) for job in jobs]
    by_key = {k: _parse_row(v) for k, v in previous.items()}
    timings = []
    for rows, times in results:
        for row in rows:
            by_key[_cell_key(row["s"], row["r"], row["C"], row["kernel"], row["repeat"])] = row
        timings.extend(times)
    return [by_key[k] for k in order], timings


def cmd_sweep(args):
    cfg = _read_config(args.config)
    plan = sweep_plan(cfg)
    data = _load(args)
    seed = _seed(args, cfg)
    previous = _read_previous(args.out) if args.resume else {}
    if previous:
        logger.info("resuming: %d cells already done", len(previous))
    rows, timings = run_sweep(data, plan, seed, workers=args.workers, previous=previous)
    _write_rows(args.out, SWEEP_COLUMNS, rows)
    summary = best_over_C(rows, plan)
    if args.summary:
        _write_rows(args.summary, SUMMARY_COLUMNS, summary)
    if args.timings:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s", "r", "C", "kernel", "repeat", "wall_time"])
        for key, secs in timings:
            writer.writerow(list(key) + [f"{secs:.6f}"])
        _emit(args.timings, buf.getvalue())
    failures = sum(1 for r in rows if not str(r.get("status", "")).startswith(("ok", "not-converged")))
    if failures:
        logger.warning("%d sweep cells failed; see the status column", failures)
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args):
    seed = args.seed if args.seed is not None else 0
    data = synth_multitask(args.tasks, args.size, args.dim, args.relatedness, args.noise, seed)
    if args.out in (None, "-"):
        write_csv(data, sys.stdout)
    else:
        save_csv(data, args.out)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="lpmtl", description="lp-coupled multi-task kernel learning toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        if dataset:
            p.add_argument("--dataset", help="CSV file (task_id,label,f1..fd) or JSON manifest")
            p.add_argument("--subsample-to-min", action="store_true", help="subsample every task to the smallest size")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--workers", type=int, default=1, help="parallel workers; results do not depend on it")

    p = sub.add_parser("erc-estimate", help="Monte Carlo ERC estimates and bounds over an s grid")
    common(p)
    p.add_argument("--samples", type=int, help="number of sigma samples D")
    p.add_argument("--per-sample", help="write per-sample values to this CSV")
    p.set_defaults(func=cmd_erc)

    p = sub.add_parser("erc-bound", help="closed-form ERC bound")
    common(p, dataset=False)
    p.add_argument("--T", dest="tasks", type=int)
    p.add_argument("--N", dest="size", type=int)
    p.add_argument("--M", dest="kernels", type=int)
    p.add_argument("--s")
    p.add_argument("--r")
    p.add_argument("--R", dest="radius", type=float)
    p.set_defaults(func=cmd_erc_bound)

    p = sub.add_parser("train", help="train a model and write it as JSON")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-task and mean accuracy of a saved model")
    common(p)
    p.add_argument("--model", help="model JSON written by 'train'")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over (s, C) with resampled splits")
    common(p)
    p.add_argument("--summary", help="write the best-over-C summary CSV here")
    p.add_argument("--timings", help="write per-cell wall times here")
    p.add_argument("--resume", action="store_true", help="skip cells already present in --out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic multi-task dataset")
    common(p, dataset=False)
    p.add_argument("--T", dest="tasks", type=int, default=5)
    p.add_argument("--N", dest="size", type=int, default=100)
    p.add_argument("--d", dest="dim", type=int, default=5)
    p.add_argument("--relatedness", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"lpmtl: numeric failure: {exc}", file=sys.stderr)
        return 1
    except (LpMtlError, ValueError, OSError) as exc:
        print(f"lpmtl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
