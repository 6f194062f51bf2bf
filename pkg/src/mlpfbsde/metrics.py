"""Monte Carlo error estimation, empirical Hoelder seminorms and rate fits.

Each trial owns a fresh :class:`RealizationContext` seeded with
``trial_seed(seed, k)``, so results do not depend on how trials are spread
over worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cost import CostCounters
from .errors import MissingExactSolutionError
from .mlp import MlpConfig, evaluate_u
from .multigrid import path_values, reference_values, simulate_y_path
from .rng import RealizationContext, trial_seed

BOOTSTRAP_RESAMPLES = 200


def lp_norm(samples, p: float) -> float:
    """``(mean |x|^p)^(1/p)``, scaled by the max to avoid overflow."""
    a = np.abs(np.asarray(samples, dtype=float))
    top = a.max() if a.size else 0.0
    if top == 0.0:
        return 0.0
    return float(top * np.mean((a / top) ** p) ** (1.0 / p))


def bootstrap_se(samples, p: float, seed: int = 0, resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    a = np.abs(np.asarray(samples, dtype=float))
    if a.size < 2 or not a.any():
        return 0.0
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, a.size, size=(resamples, a.size))
    stats = [lp_norm(a[row], p) for row in picks]
    return float(np.std(stats, ddof=1))


@dataclass
class ErrorEstimate:
    mean_error: float
    lp_error: float
    p: float
    trials: int
    standard_error: float
    samples: np.ndarray = field(repr=False, default=None)
    counters: CostCounters = field(default_factory=CostCounters)

    @classmethod
    def from_errors(cls, errors, p: float, seed: int = 0, counters=None) -> "ErrorEstimate":
        errors = np.abs(np.asarray(errors, dtype=float))
        if errors.size < 2:
            raise ValueError("need at least two trials")
        return cls(mean_error=float(errors.mean()), lp_error=lp_norm(errors, p), p=p,
                   trials=int(errors.size), standard_error=bootstrap_se(errors, p, seed),
                   samples=errors, counters=counters or CostCounters())

    def as_dict(self) -> dict:
        return {"mean_error": self.mean_error, "lp_error": self.lp_error, "p": self.p,
                "trials": self.trials, "standard_error": self.standard_error,
                "measured_cost": self.counters.as_dict()}


def run_trials(fn: Callable, args: tuple, trials: int, seed: int, workers: int = 1) -> list:
    """``[fn(trial_seed(seed, k), *args) for k in range(trials)]`` possibly in parallel.

    Worker ``w`` handles trials ``k`` with ``k % workers == w``; results come
    back in trial order either way.
    """
    seeds = [trial_seed(seed, k) for k in range(trials)]
    if workers <= 1 or trials < 2:
        return [fn(s, *args) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunks = [seeds[w::workers] for w in range(workers)]
        parts = list(pool.map(_run_chunk, [fn] * workers, chunks, [args] * workers))
    out = [None] * trials
    for w, part in enumerate(parts):
        out[w::workers] = part
    return out


def _run_chunk(fn, seeds, args):
    return [fn(s, *args) for s in seeds]


def _sum_counters(results) -> CostCounters:
    total = CostCounters()
    for _, c in results:
        total = total + c
    return total


# pointwise ------------------------------------------------------------------

def _point_trial(s, problem, config, t, x, budget):
    ctx = RealizationContext(s, problem.d, problem.T, f_budget=budget)
    value = evaluate_u(ctx, (0,), problem, config, t, x)
    return value, ctx.counters


def sample_u(problem, config: MlpConfig, t: float, x, trials: int, seed: int = 0,
             workers: int = 1, budget: Optional[int] = None) -> tuple[np.ndarray, CostCounters]:
    """Independent realizations of ``U_{n,m}(t, x)`` and the summed counters."""
    x = np.asarray(x, dtype=float)
    results = run_trials(_point_trial, (problem, config, t, x, budget), trials, seed, workers)
    return np.array([v for v, _ in results]), _sum_counters(results)


def estimate_pointwise_error(problem, config: MlpConfig, t: float, x, trials: int,
                             p: float = 2.0, seed: int = 0, workers: int = 1,
                             budget: Optional[int] = None) -> ErrorEstimate:
    if problem.exact_u is None:
        raise MissingExactSolutionError(f"problem {problem.name!r} has no closed-form solution")
    if trials < 2:
        raise ValueError("need at least two trials")
    values, counters = sample_u(problem, config, t, x, trials, seed, workers, budget)
    ref = problem.exact_u(t, np.asarray(x, dtype=float))
    return ErrorEstimate.from_errors(values - ref, p, seed, counters)


# pathwise -------------------------------------------------------------------

def _path_trial(s, problem, config, x0, budget):
    ctx = RealizationContext(s, problem.d, problem.T, f_budget=budget)
    est = simulate_y_path(ctx, problem, config, x0)
    err = float(np.max(np.abs(path_values(est) - reference_values(est, problem))))
    return err, ctx.counters


def estimate_path_error(problem, config: MlpConfig, x0=None, trials: int = 100, p: float = 2.0,
                        seed: int = 0, workers: int = 1,
                        budget: Optional[int] = None) -> ErrorEstimate:
    """L^p norm over trials of ``max_k |Y_{t_k} - u(t_k, X_{t_k})|`` on the finest grid."""
    if problem.exact_u is None:
        raise MissingExactSolutionError(f"problem {problem.name!r} has no closed-form solution")
    if trials < 2:
        raise ValueError("need at least two trials")
    x0 = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float)
    results = run_trials(_path_trial, (problem, config, x0, budget), trials, seed, workers)
    return ErrorEstimate.from_errors([e for e, _ in results], p, seed, _sum_counters(results))


# Hoelder seminorms ------------------------------------------------------------

@dataclass
class HolderSeminormConfig:
    p: float = 2.0
    q1: float = 3.0
    q2: float = 9.0
    V: Callable = None
    probe_points: Optional[Sequence] = None
    probe_pairs: Optional[Sequence] = None

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.q1 < 3 or self.q2 < 9:
            raise ValueError("need q1 >= 3 and q2 >= 9")
        if self.q1 + 2 > self.q2:
            raise ValueError("need q1 + 2 <= q2")
        if self.V is None:
            self.V = _unit_weight


def _unit_weight(t, x):
    return 1.0


def default_probe_points(T: float, x0) -> list:
    """``{0, T/4, T/2, 3T/4, T} x {x0, x0 +- e_i}``."""
    x0 = np.asarray(x0, dtype=float)
    spots = [x0]
    for i in range(x0.shape[0]):
        e = np.zeros_like(x0)
        e[i] = 1.0
        spots += [x0 + e, x0 - e]
    return [(T * k / 4, x) for k in range(5) for x in spots]


def _mlp_error_field(ctx, problem, config, t, x):
    return evaluate_u(ctx, (0,), problem, config, t, x) - problem.exact_u(t, x)


def empirical_holder_seminorm(problem, config: MlpConfig, hs: HolderSeminormConfig, s: float,
                              trials: int, seed: int = 0, x0=None,
                              field_fn: Optional[Callable] = None) -> tuple[float, float]:
    """Finite-probe estimates of the weighted sup norm and the Hoelder-type seminorm.

    ``field_fn(ctx, problem, config, t, x)`` gives one realization of the
    field ``H``; the default is ``U_{n,m} - u``. All probes of one trial
    share a context, so ``H`` is a single random field per trial. The
    results are lower bounds for the true suprema.
    """
    field_fn = field_fn or _mlp_error_field
    if field_fn is _mlp_error_field and problem.exact_u is None:
        raise MissingExactSolutionError(f"problem {problem.name!r} has no closed-form solution")
    T = problem.T
    if hs.probe_points is None:
        probes = default_probe_points(T, np.zeros(problem.d) if x0 is None else x0)
    else:
        probes = [(float(t), np.asarray(x, dtype=float)) for t, x in hs.probe_points]
    probes = [(t, x) for t, x in probes if s <= t <= T]
    if not probes:
        raise ValueError("empty probe set")
    weights = np.array([hs.V(t, x) for t, x in probes], dtype=float)
    if (weights < 1).any():
        raise ValueError("the weight function V must be >= 1 on every probe")

    samples = np.empty((trials, len(probes)))
    for k in range(trials):
        ctx = RealizationContext(trial_seed(seed, k), problem.d, T)
        samples[k] = [field_fn(ctx, problem, config, t, x) for t, x in probes]

    norm1 = max(lp_norm(samples[:, j], hs.p) / weights[j] ** hs.q1 for j in range(len(probes)))

    if hs.probe_pairs is None:
        pairs = [(a, b) for a in range(len(probes)) for b in range(a + 1, len(probes))]
    else:
        pairs = hs.probe_pairs
    norm2 = 0.0
    for a, b in pairs:
        (t1, x1), (t2, x2) = probes[a], probes[b]
        if t1 == t2 and np.array_equal(x1, x2):
            continue
        v1, v2 = weights[a], weights[b]
        denom = ((v1**hs.q2 + v2**hs.q2) / 2) * (
            (v1 + v2) / 2 * math.sqrt(abs(t1 - t2)) / math.sqrt(T)
            + float(np.linalg.norm(x1 - x2)) / math.sqrt(T))
        norm2 = max(norm2, lp_norm(samples[:, a] - samples[:, b], hs.p) / denom)
    return float(norm1), float(norm2)


# rate fitting -----------------------------------------------------------------

def fit_rate(points, log_x: bool = True) -> tuple[float, float, float]:
    """Least squares of ``log y`` on ``log x``; returns ``(slope, intercept, r2)``.

    With ``log_x=False`` the abscissa is used as given (semi-log fit).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("need at least three (x, y) points")
    if (pts[:, 1] <= 0).any() or (log_x and (pts[:, 0] <= 0).any()):
        raise ValueError("rate fits need positive values")
    lx = np.log(pts[:, 0]) if log_x else pts[:, 0]
    ly = np.log(pts[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), float(intercept), r2
