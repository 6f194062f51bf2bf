"""Euler-Maruyama on the global grid ``{k T / n}`` clipped at the start time.

Brownian increments are differences of :func:`~mlpfbsde.rng.brownian_at`
values, so every path started from any ``(s, x)`` with the same index is
driven by the same realized Brownian motion. Grid times are produced from
reduced fractions ``k / n``, which makes a point shared by two grids
(e.g. ``T/2`` on the 2- and 4-step grids) bit-identical on both.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError
from .rng import RealizationContext, brownian_at


@lru_cache(maxsize=4096)
def grid_points(n: int, T: float) -> tuple:
    """``(0, T/n, ..., T)`` with each point rounded from the reduced fraction."""
    if n < 1:
        raise ValueError(f"step count must be >= 1, got {n}")
    return tuple(T * float(Fraction(k, n)) for k in range(n)) + (T,)


def grid_time(k: int, n: int, T: float) -> float:
    return grid_points(n, T)[k]


def global_grid_times(s: float, t: float, n: int, T: float) -> list:
    """Update times ``s``, every ``k T / n`` strictly inside ``(s, t)``, then ``t``."""
    if s > t:
        raise ValueError(f"start time {s} after end time {t}")
    if not (0.0 <= s and t <= T):
        raise ValueError(f"times must lie in [0, {T}]")
    if s == t:
        return [s]
    grid = grid_points(n, T)
    inner = grid[bisect_right(grid, s):bisect_left(grid, t)]
    return [s, *inner, t]


@dataclass
class EulerEndpoint:
    start_time: float
    start_state: np.ndarray
    step_count: int
    end_time: float
    end_state: np.ndarray
    visited_grid_times: list


def euler_states(ctx: RealizationContext, index: tuple, problem, n: int,
                 s: float, x: np.ndarray, targets: Sequence[float]) -> list:
    """Euler states at each time in ``targets`` (ascending, within ``[s, T]``).

    One pass over the grid serves all targets. A target strictly between two
    grid points branches off the current grid state with a partial step that
    reuses the coefficients already evaluated there.
    """
    T = ctx.T
    grid = grid_points(n, T)
    counters = ctx.counters
    mu, sigma = problem.mu, problem.sigma
    out = []
    cur_t = s
    cur_x = x
    k = bisect_right(grid, s)
    drift = vol = w_cur = None
    step = 0
    for tgt in targets:
        if tgt < cur_t:
            raise ValueError("target times must be ascending and not before the start time")
        while True:
            if tgt == cur_t:
                out.append(cur_x)
                break
            if drift is None:
                drift = mu(cur_x)
                vol = sigma(cur_x)
                counters.mu_evals += 1
                counters.sigma_evals += 1
                w_cur = brownian_at(ctx, index, cur_t)
            nxt = grid[k]
            if tgt < nxt:
                branch = cur_x + drift * (tgt - cur_t) + vol @ (brownian_at(ctx, index, tgt) - w_cur)
                if not np.isfinite(branch).all():
                    raise DivergenceError(step + 1, tgt, index)
                out.append(branch)
                break
            w_next = brownian_at(ctx, index, nxt)
            cur_x = cur_x + drift * (nxt - cur_t) + vol @ (w_next - w_cur)
            step += 1
            if not np.isfinite(cur_x).all():
                raise DivergenceError(step, nxt, index)
            cur_t, w_cur = nxt, w_next
            drift = None
            k += 1
    return out


def euler_endpoint(ctx: RealizationContext, index, problem, n: int,
                   s: float, x, t: float) -> EulerEndpoint:
    if not 0.0 <= s <= t <= ctx.T:
        raise ValueError(f"need 0 <= s <= t <= T, got s={s}, t={t}")
    x = np.asarray(x, dtype=float)
    idx = tuple(index)
    (end,) = euler_states(ctx, idx, problem, n, s, x, (t,))
    return EulerEndpoint(s, x, n, t, end, global_grid_times(s, t, n, ctx.T))


def coupled_pair(ctx: RealizationContext, index, problem, level: int, m: int,
                 s: float, x, t: float) -> tuple[EulerEndpoint, Optional[EulerEndpoint]]:
    """Fine (``m**level`` steps) and coarse (``m**(level-1)`` steps) endpoints on one path.

    The coarse endpoint is ``None`` at level 0. The fine path is simulated
    first.
    """
    if level < 0 or m < 1:
        raise ValueError("need level >= 0 and m >= 1")
    fine = euler_endpoint(ctx, index, problem, m**level, s, x, t)
    coarse = euler_endpoint(ctx, index, problem, m ** (level - 1), s, x, t) if level >= 1 else None
    return fine, coarse


def strong_error_reference(problem, x0: float, t: float, w_t: float) -> float:
    """Exact GBM state ``x0 exp((a - s^2/2) t + s W_t)`` for ``gbm_linear``."""
    fam = problem.family
    if fam is None or fam.kind != "gbm":
        raise ValueError("strong reference is only available for gbm_linear")
    return x0 * math.exp((fam.rate - 0.5 * fam.gbm_vol**2) * t + fam.gbm_vol * w_t)
