"""Pathwise approximation of the backward process by multigrid interpolation.

For ``l = 0, ..., n-1`` the field ``U^{(l)}_{n-l,m}`` is evaluated along one
finest-grid Euler skeleton (index ``(0,)``, ``m**n`` steps from ``x0``) at
the nodes of the ``m**(l+1)`` grid, and, for ``l >= 1``, of the ``m**l``
grid. The estimate at time ``t`` is the telescoped sum of the piecewise
linear interpolants

    Y_t = sum_l [ L_{m^{l+1}} U^{(l)}(t) - 1[l>=1] L_{m^l} U^{(l)}(t) ].

Every breakpoint lies on the finest grid, so the maximum of ``|Y - ref|``
over the finest grid is the exact maximum of the piecewise-linear ``Y``
against a reference that is itself linear between those nodes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import CostCounters, CostModel, CostReport
from .euler import euler_states, grid_points
from .mlp import MlpConfig, evaluate_u
from .rng import RealizationContext

SKELETON_INDEX = (0,)


def _floor_index(t: float, count: int, T: float) -> int:
    grid = grid_points(count, T)
    k = min(count - 1, max(0, int(t * count / T)))
    while k > 0 and grid[k] > t:
        k -= 1
    while k + 1 <= count - 1 and grid[k + 1] <= t:
        k += 1
    return k


def floor_grid(t: float, m: int, T: float) -> float:
    """Largest point of ``{0, T/m, ..., T}`` that is ``<= t`` and differs from ``T``."""
    if not 0.0 <= t <= T:
        raise ValueError(f"time {t} outside [0, {T}]")
    return grid_points(m, T)[_floor_index(t, m, T)]


def ceil_grid(t: float, m: int, T: float) -> float:
    """Smallest grid point strictly above ``t``, or ``T`` when ``t == T``."""
    if not 0.0 <= t <= T:
        raise ValueError(f"time {t} outside [0, {T}]")
    return grid_points(m, T)[_floor_index(t, m, T) + 1]


def _interpolate(values: np.ndarray, count: int, T: float, t: float) -> float:
    k = _floor_index(t, count, T)
    grid = grid_points(count, T)
    lo, hi = grid[k], grid[k + 1]
    width = hi - lo
    return ((hi - t) / width) * values[k] + ((t - lo) / width) * values[k + 1]


@dataclass
class PathEstimate:
    n: int
    m: int
    T: float
    x0: np.ndarray
    forward_skeleton: np.ndarray
    level_values: list
    cost: Optional[CostReport] = None
    seed: Optional[int] = None
    counters: CostCounters = field(default_factory=CostCounters)

    @property
    def times(self) -> tuple:
        return grid_points(self.m**self.n, self.T)


def simulate_y_path(ctx: RealizationContext, problem, config: MlpConfig,
                    x0=None, cost_model: Optional[CostModel] = None) -> PathEstimate:
    n, m = config.n, config.m
    if n < 1:
        raise ValueError("the path estimator needs n >= 1")
    T = ctx.T
    x0 = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float)
    before = ctx.counters.copy()

    finest = m**n
    grid = grid_points(finest, T)
    states = euler_states(ctx, SKELETON_INDEX, problem, finest, 0.0, x0, grid[1:])
    skeleton = np.vstack([x0, *states])

    level_values = []
    for ell in range(n):
        field_cfg = MlpConfig(n - ell, m, config.memoize)
        fine_count = m ** (ell + 1)
        stride = finest // fine_count
        fine_grid = grid_points(fine_count, T)
        fine = np.array([
            evaluate_u(ctx, (ell,), problem, field_cfg, fine_grid[k], skeleton[k * stride])
            for k in range(fine_count + 1)
        ])
        coarse = None
        if ell >= 1:
            coarse_count = m**ell
            coarse_grid = grid_points(coarse_count, T)
            coarse = np.array([
                evaluate_u(ctx, (ell,), problem, field_cfg, coarse_grid[k], skeleton[k * stride * m])
                for k in range(coarse_count + 1)
            ])
        level_values.append((fine, coarse))

    spent = ctx.counters.copy()
    for name in vars(spent):
        setattr(spent, name, getattr(spent, name) - getattr(before, name))
    model = cost_model or CostModel.for_counters(problem.d)
    return PathEstimate(n, m, T, x0, skeleton, level_values,
                        cost=CostReport.build(n, m, spent, model),
                        seed=ctx.master_seed, counters=spent)


def interpolate_y(estimate: PathEstimate, t: float) -> float:
    T, m = estimate.T, estimate.m
    if not 0.0 <= t <= T:
        raise ValueError(f"time {t} outside [0, {T}]")
    total = 0.0
    for ell, (fine, coarse) in enumerate(estimate.level_values):
        term = _interpolate(fine, m ** (ell + 1), T, t)
        if ell >= 1:
            term = term - _interpolate(coarse, m**ell, T, t)
        total += term
    return total


def path_values(estimate: PathEstimate) -> np.ndarray:
    """``Y`` at every finest-grid time."""
    return np.array([interpolate_y(estimate, t) for t in estimate.times])


def reference_values(estimate: PathEstimate, problem) -> np.ndarray:
    """``u(t_k, X_{t_k})`` along the simulated skeleton."""
    return np.array([problem.exact_u(t, x) for t, x in zip(estimate.times, estimate.forward_skeleton)])


def to_csv(estimate: PathEstimate, problem=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    with_ref = problem is not None and problem.exact_u is not None
    writer.writerow(["t", "Y", "u_ref", "abs_err"] if with_ref else ["t", "Y"])
    ys = path_values(estimate)
    refs = reference_values(estimate, problem) if with_ref else None
    for k, t in enumerate(estimate.times):
        row = [repr(t), repr(float(ys[k]))]
        if with_ref:
            row += [repr(float(refs[k])), repr(float(abs(ys[k] - refs[k])))]
        writer.writerow(row)
    return buf.getvalue()


def to_json(estimate: PathEstimate, problem=None) -> str:
    doc = {
        "schema_version": 1,
        "config": {"n": estimate.n, "m": estimate.m, "T": estimate.T, "x0": estimate.x0.tolist()},
        "seed": estimate.seed,
        "times": list(estimate.times),
        "Y": path_values(estimate).tolist(),
        "forward_skeleton": estimate.forward_skeleton.tolist(),
        "cost": estimate.cost.as_dict() if estimate.cost else estimate.counters.as_dict(),
    }
    if problem is not None:
        doc["problem"] = {"name": problem.name, "d": problem.d, "params": problem.params}
        if problem.exact_u is not None:
            doc["u_ref"] = reference_values(estimate, problem).tolist()
    return json.dumps(doc, indent=2, sort_keys=True)
