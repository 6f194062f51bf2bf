"""Command-line front end.

    python -m mlpfbsde --config experiment.toml --mode converge --n 1-5 --out results/

Config files are TOML::

    [problem]
    name = "arithmetic_bm_linear"
    d = 5
    T = 1.0
    [problem.params]
    alpha = 0.5
    beta = 1.0

    [experiment]          # every key may also be given as a flag
    mode = "converge"     # point | path | converge | cost | oracle
    n = "1-5"             # int or inclusive range "a-b"
    m = "schedule"        # int or "schedule" (M(n) = floor(sqrt(ln n)) + 1)
    trials = 200
    p = 2
    seed = "0x2a"
    t = 0.0               # evaluation time for point mode
    x0 = [0.0, 0.0]       # defaults to the origin
    delta = 0.1           # exponent slack in eps^(2+delta) * cost
    epsilon = 0.05        # target for the empirical-n(eps) rule
    criterion = "path"    # error used by converge: path | point
    budget = 1000000      # cap on f evaluations per trial
    workers = 1

    [cost]                # unit costs for cost mode
    a1 = 1
    a2 = 1
    a3 = 1

    [oracle]
    time_steps = 32
    space_points = 81
    order = 20
    iterations = 200
    tol = 1e-10

Exit codes: 0 success, 2 configuration error, 3 budget exceeded,
4 Euler divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import oracle as oracle_mod
from .cost import CostCounters, CostModel, cost_closed_bound, cost_recursion_u, cost_total, m_schedule
from .errors import BudgetExceededError, ConfigError, DivergenceError
from .metrics import ErrorEstimate, fit_rate, run_trials, sample_u
from .mlp import MlpConfig
from .multigrid import path_values, reference_values, simulate_y_path, to_csv
from .problem import make_builtin
from .rng import RealizationContext, parse_seed

SCHEMA_VERSION = 1
MODES = ("point", "path", "converge", "cost", "oracle")
TABLE_HEADER = ["n", "m", "trials", "p", "lp_error", "se", "cost_total"]
EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_DIVERGENCE = 0, 2, 3, 4

log = logging.getLogger("mlpfbsde")

_EXPERIMENT_KEYS = {"mode", "n", "m", "trials", "p", "seed", "t", "x0", "delta", "epsilon",
                    "criterion", "budget", "workers", "out"}
_DEFAULTS = {"mode": "point", "n": "3", "m": "schedule", "trials": 100, "p": 2.0, "seed": 0,
             "t": 0.0, "x0": None, "delta": 0.1, "epsilon": None, "criterion": "path",
             "budget": None, "workers": 1, "out": "mlp-out"}


# configuration ----------------------------------------------------------------

def _line_of(text: str, key: str) -> Optional[int]:
    pattern = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=")
    for k, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return k
    return None


def _fail(msg: str, text: str = "", key: Optional[str] = None, path: str = "<config>"):
    line = _line_of(text, key) if key and text else None
    where = f"{path}:{line}: " if line else f"{path}: "
    raise ConfigError(where + msg)


def load_config(path: Optional[str]) -> tuple[dict, str]:
    """Parse a TOML config file; returns the document and its raw text."""
    if path is None:
        return {}, ""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return doc, text


def parse_n_range(value) -> list[int]:
    """``3`` -> [3]; ``"1-5"`` or ``"1:5"`` -> [1, 2, 3, 4, 5]."""
    if isinstance(value, int) and not isinstance(value, bool):
        return [value]
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    text = str(value).strip()
    m = re.fullmatch(r"(\d+)\s*[-:]\s*(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo > hi:
            raise ValueError(f"empty n range {text!r}")
        return list(range(lo, hi + 1))
    if text.isdigit():
        return [int(text)]
    raise ValueError(f"invalid n {value!r}")


def resolve_m(m_spec, n: int) -> int:
    if isinstance(m_spec, str) and m_spec.strip().lower() == "schedule":
        return m_schedule(max(n, 1))
    try:
        m = int(m_spec)
    except (TypeError, ValueError):
        raise ValueError(f"m must be an integer or 'schedule', got {m_spec!r}") from None
    if m < 1:
        raise ValueError("m must be >= 1")
    return m


def build_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) and validate."""
    doc, text = load_config(args.config)
    cfg_path = args.config or "<flags>"
    unknown = set(doc) - {"problem", "experiment", "cost", "oracle"}
    for key in sorted(unknown):
        _fail(f"unknown section [{key}]", text, key, cfg_path)
    exp = dict(doc.get("experiment", {}))
    for key in sorted(set(exp) - _EXPERIMENT_KEYS):
        _fail(f"unknown experiment key {key!r}", text, key, cfg_path)

    s = dict(_DEFAULTS)
    s.update(exp)
    for key in _EXPERIMENT_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            s[key] = v

    def check(cond, msg, key):
        if not cond:
            _fail(msg, text, key if key in exp else None, cfg_path)

    check(s["mode"] in MODES, f"mode must be one of {', '.join(MODES)}", "mode")
    try:
        s["n_values"] = parse_n_range(s["n"])
    except ValueError as exc:
        _fail(str(exc), text, "n", cfg_path)
    min_n = 1 if s["mode"] in ("point", "path", "converge") else 0
    check(all(n >= min_n for n in s["n_values"]), f"n must be >= {min_n}", "n")
    try:
        for n in s["n_values"]:
            resolve_m(s["m"], n)
    except ValueError as exc:
        _fail(str(exc), text, "m", cfg_path)
    check(isinstance(s["trials"], int) and s["trials"] >= 1, "trials must be a positive integer", "trials")
    check(float(s["p"]) >= 2, "p must be >= 2", "p")
    s["p"] = float(s["p"])
    try:
        s["seed"] = parse_seed(s["seed"])
    except (TypeError, ValueError) as exc:
        _fail(str(exc), text, "seed", cfg_path)
    check(s["budget"] is None or (isinstance(s["budget"], int) and s["budget"] >= 1),
          "budget must be a positive integer", "budget")
    check(isinstance(s["workers"], int) and s["workers"] >= 1, "workers must be a positive integer", "workers")
    check(s["criterion"] in ("path", "point"), "criterion must be 'path' or 'point'", "criterion")
    check(s["epsilon"] is None or float(s["epsilon"]) > 0, "epsilon must be positive", "epsilon")
    check(float(s["delta"]) >= 0, "delta must be nonnegative", "delta")

    prob = dict(doc.get("problem", {}))
    name = args.problem or prob.get("name")
    if s["mode"] != "cost":
        check(name is not None, "no problem selected (set problem.name or --problem)", "name")
    d = args.d if args.d is not None else prob.get("d", 1)
    params = dict(prob.get("params", {}))
    if "T" in prob:
        params["T"] = prob["T"]
    s["problem_spec"] = {"name": name, "d": d, "params": params}
    if name is not None:
        try:
            s["problem"] = make_builtin(name, d, params)
        except (ConfigError, ValueError, TypeError) as exc:
            _fail(str(exc), text, "name", cfg_path)
        pd = s["problem"].d
        x0 = np.zeros(pd) if s["x0"] is None else np.asarray(s["x0"], dtype=float).reshape(-1)
        check(x0.shape == (pd,), f"x0 must have {pd} entries", "x0")
        s["x0"] = x0
        check(0.0 <= float(s["t"]) <= s["problem"].T, "t must lie in [0, T]", "t")
        s["t"] = float(s["t"])

    costs = doc.get("cost", {})
    try:
        s["cost_model"] = CostModel(int(costs.get("a1", 1)), int(costs.get("a2", 1)),
                                    int(costs.get("a3", 1)), int(d))
    except ValueError as exc:
        _fail(str(exc), text, "a1", cfg_path)
    s["oracle"] = {"time_steps": 32, "space_points": None, "order": 20, "iterations": 200,
                   "tol": 1e-10, **doc.get("oracle", {})}
    return s


# experiments ------------------------------------------------------------------

def _cost_bound(problem, n: int, m: int) -> int:
    return cost_total(n, m, CostModel.for_counters(problem.d))


def _point_reference(s) -> tuple[Optional[float], str]:
    problem = s["problem"]
    if problem.exact_u is not None:
        return float(problem.exact_u(s["t"], s["x0"])), "exact"
    if problem.family is not None and problem.d <= 3:
        oc = s["oracle"]
        grid = oracle_mod.make_grid(problem, time_steps=int(oc["time_steps"]),
                                    space_points=oc["space_points"], order=int(oc["order"]))
        table = oracle_mod.picard_reference(problem, grid, int(oc["iterations"]), float(oc["tol"]))
        return table.value(s["t"], s["x0"]), "oracle"
    return None, "none"


def _point_rows(s) -> list[dict]:
    problem = s["problem"]
    ref, source = _point_reference(s)
    rows = []
    for n in s["n_values"]:
        m = resolve_m(s["m"], n)
        values, counters = sample_u(problem, MlpConfig(n, m), s["t"], s["x0"], s["trials"],
                                    s["seed"], s["workers"], s["budget"])
        extra = {"mean_estimate": float(np.mean(values)), "reference": ref, "reference_source": source}
        if ref is None:
            # nothing to compare with: report the estimate and its Monte Carlo spread
            spread = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
            rows.append({"n": n, "m": m, "trials": len(values), "p": s["p"], "lp_error": "",
                         "se": spread, "cost_total": _cost_bound(problem, n, m),
                         "measured_cost": counters.as_dict(),
                         "measured_cost_per_trial": counters.total() / len(values), **extra})
            continue
        est = _estimate(values - ref, s, counters)
        rows.append(_row(n, m, est, problem, extra=extra))
    return rows


def _path_trial(seed, problem, config, x0, budget):
    ctx = RealizationContext(seed, problem.d, problem.T, f_budget=budget)
    est = simulate_y_path(ctx, problem, config, x0)
    err = float(np.max(np.abs(path_values(est) - reference_values(est, problem))))
    return err, ctx.counters, to_csv(est, problem)


def _path_rows(s, out: Optional[Path]) -> list[dict]:
    problem = s["problem"]
    if problem.exact_u is None:
        raise ConfigError(f"problem {problem.name!r} has no closed-form solution")
    rows = []
    for n in s["n_values"]:
        m = resolve_m(s["m"], n)
        results = run_trials(_path_trial, (problem, MlpConfig(n, m), s["x0"], s["budget"]),
                             s["trials"], s["seed"], s["workers"])
        counters = CostCounters()
        for _, c, _ in results:
            counters = counters + c
        if out is not None:
            folder = out / "paths" / f"n{n}_m{m}"
            folder.mkdir(parents=True, exist_ok=True)
            for k, (_, _, text) in enumerate(results):
                (folder / f"trial{k:05d}.csv").write_text(text)
        est = _estimate([e for e, _, _ in results], s, counters)
        rows.append(_row(n, m, est, problem))
    return rows


def _estimate(errors, s, counters) -> ErrorEstimate:
    errors = np.abs(np.asarray(errors, dtype=float))
    if errors.size < 2:
        # a single trial has no spread; report it with zero SE
        return ErrorEstimate(float(errors.mean()), float(errors.mean()), s["p"], int(errors.size),
                             0.0, errors, counters)
    return ErrorEstimate.from_errors(errors, s["p"], s["seed"] & 0xFFFFFFFF, counters)


def _row(n, m, est: ErrorEstimate, problem, extra=None) -> dict:
    row = {"n": n, "m": m, "trials": est.trials, "p": est.p, "lp_error": est.lp_error,
           "se": est.standard_error, "mean_error": est.mean_error,
           "cost_total": _cost_bound(problem, n, m),
           "measured_cost": est.counters.as_dict(),
           "measured_cost_per_trial": est.counters.total() / est.trials}
    row.update(extra or {})
    return row


def _converge(s, out) -> dict:
    problem = s["problem"]
    if s["criterion"] == "path" and problem.exact_u is None:
        raise ConfigError(f"problem {problem.name!r} has no closed-form solution; use criterion 'point'")
    rows = _path_rows(s, None) if s["criterion"] == "path" else _point_rows(s)
    if any(r["lp_error"] == "" for r in rows):
        raise ConfigError(f"problem {problem.name!r} has no reference solution to converge to")
    delta = float(s["delta"])
    for r in rows:
        r["eps_cost"] = r["lp_error"] ** (2 + delta) * r["cost_total"] if r["lp_error"] > 0 else 0.0
    summary = {"rows": rows, "criterion": s["criterion"], "delta": delta}
    usable = [(r["n"] * np.log(max(r["m"], 2)), r["lp_error"]) for r in rows if r["lp_error"] > 0]
    if len(usable) >= 3:
        slope, intercept, r2 = fit_rate(usable, log_x=False)
        summary["rate_fit"] = {"x": "n*log(max(m,2))", "slope": slope, "intercept": intercept, "r2": r2}
    else:
        summary["rate_fit"] = None
    if s["epsilon"] is not None:
        eps = float(s["epsilon"])
        hit = next((r["n"] for r in rows if r["lp_error"] + 3 * r["se"] < eps), None)
        summary["empirical-n(eps)"] = {"epsilon": eps, "n": hit,
                                       "rule": "smallest n with lp_error + 3*se < epsilon"}
    return summary


def _cost_table(s) -> list[dict]:
    model = s["cost_model"]
    rows = []
    for n in s["n_values"]:
        m = resolve_m(s["m"], max(n, 1))
        rows.append({"n": n, "m": m, "a1": model.a1, "a2": model.a2, "a3": model.a3,
                     "recursion": cost_recursion_u(n, m, model),
                     "closed_bound": cost_closed_bound(n, m, model),
                     "cost_total": cost_total(n, m, model)})
    return rows


def _oracle(s, out: Optional[Path]) -> dict:
    problem = s["problem"]
    oc = s["oracle"]
    grid = oracle_mod.make_grid(problem, time_steps=int(oc["time_steps"]),
                                space_points=oc["space_points"], order=int(oc["order"]),
                                center=s["x0"] if problem.family and problem.family.kind == "gbm" else None)
    solved = oracle_mod.picard_reference(problem, grid, int(oc["iterations"]), float(oc["tol"]))
    if out is not None:
        (out / "oracle.csv").write_text(oracle_mod.export_table(solved))
    value = solved.value(s["t"], s["x0"])
    doc = {"value": value, "t": s["t"], "x0": s["x0"].tolist(), "residual": solved.residual,
           "iterations": solved.iterations, "history": solved.history,
           "time_steps": int(oc["time_steps"]), "order": solved.order, "shape": list(solved.shape)}
    if problem.exact_u is not None:
        doc["exact"] = float(problem.exact_u(s["t"], s["x0"]))
    return doc


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _table_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    return buf.getvalue()


def run(s: dict) -> dict:
    """Execute one experiment and write its artifacts; returns the results document."""
    out = Path(s["out"]) if s["out"] else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    mode = s["mode"]
    doc = {"schema_version": SCHEMA_VERSION, "mode": mode, "seed": s["seed"],
           "problem": s["problem_spec"], "p": s["p"], "trials": s["trials"], "workers": s["workers"]}
    table, header = None, TABLE_HEADER
    if mode == "point":
        doc["rows"] = table = _point_rows(s)
        doc["t"], doc["x0"] = s["t"], s["x0"].tolist()
    elif mode == "path":
        doc["rows"] = table = _path_rows(s, out)
        doc["x0"] = s["x0"].tolist()
    elif mode == "converge":
        doc.update(_converge(s, out))
        table = doc["rows"]
        if out is not None:
            (out / "converge.csv").write_text(_table_csv(
                table, ["n", "m", "trials", "p", "lp_error", "se", "measured_cost_per_trial",
                        "cost_total", "eps_cost"]))
    elif mode == "cost":
        doc["rows"] = table = _cost_table(s)
        header = ["n", "m", "a1", "a2", "a3", "recursion", "closed_bound", "cost_total"]
        for key in ("p", "trials", "workers", "seed"):
            doc.pop(key)
    else:
        doc["oracle"] = _oracle(s, out)
    if out is not None:
        (out / "results.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        if table is not None:
            (out / "table.csv").write_text(_table_csv(table, header))
    return doc


# entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlpfbsde",
                                 description="Multilevel Picard solver for decoupled FBSDEs.")
    ap.add_argument("--config", help="TOML experiment file")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--problem", help="builtin problem name (overrides problem.name)")
    ap.add_argument("--d", type=int, help="state dimension (overrides problem.d)")
    ap.add_argument("--n", help="level count or inclusive range such as 1-5")
    ap.add_argument("--m", help="integer base or 'schedule'")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--p", type=float)
    ap.add_argument("--seed", help="64-bit master seed, decimal or 0x-hex")
    ap.add_argument("--t", type=float, help="evaluation time for point mode")
    ap.add_argument("--delta", type=float)
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--criterion", choices=("path", "point"))
    ap.add_argument("--budget", type=int, help="cap on f evaluations per trial")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.x0 = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = build_settings(args)
        doc = run(settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    if not settings["out"]:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"wrote {settings['out']}/results.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
