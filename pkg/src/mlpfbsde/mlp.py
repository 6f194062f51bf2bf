"""Multilevel Picard estimator ``U_{n,m}^theta(t, x)`` as a consistent random field.

``U_{0,m} = U_{-1,m} = 0`` and, for ``n >= 1``,

    U_{n,m}^theta(t, x) = sum_{l=0}^{n-1} m^{-(n-l)} sum_{i=1}^{m^{n-l}} [
        g(X^{m^l}_{t,T}) - 1[l>=1] g(X^{m^{l-1}}_{t,T})
        + (T-t) f(U_{l,m}^{(theta,l,i)}(tau, X^{m^l}_{t,tau}))
        - 1[l>=1] (T-t) f(U_{l-1,m}^{(theta,l,-i)}(tau, X^{m^{l-1}}_{t,tau})) ]

with ``tau = t + (T-t) r^{(theta,l,i)}`` and both Euler paths driven by
``W^{(theta,l,i)}``. Only strict descendants of ``theta`` are consumed, so
the randomness owned by ``theta`` stays free for other uses.

Traversal is canonical: ``l`` ascending, ``i`` ascending; within a summand
the uniform is drawn first, then the fine path (serving ``tau`` and ``T`` in
one pass), the coarse path, and finally the fine and coarse sub-fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError
from .euler import euler_states
from .rng import RealizationContext, as_index, uniform_time


@dataclass(frozen=True)
class MlpConfig:
    n: int
    m: int
    memoize: bool = True

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


def _block_mean(values: list) -> float:
    # Shifted compensated mean: exact when all values coincide.
    first = values[0]
    return first + math.fsum(v - first for v in values) / len(values)


def _evaluate(ctx: RealizationContext, index: tuple, problem, n: int, m: int,
              memoize: bool, t: float, x: np.ndarray) -> float:
    if n <= 0:
        return 0.0
    if memoize:
        key = (index, n, t, x.tobytes())
        hit = ctx.u_memo.get(key)
        if hit is not None:
            return hit

    T = ctx.T
    span = T - t
    f, g = problem.f, problem.g
    counters = ctx.counters
    budget = ctx.f_budget
    blocks = []
    for ell in range(n):
        fine_steps = m**ell
        coarse_steps = m ** (ell - 1) if ell >= 1 else 0
        terms = []
        for i in range(1, m ** (n - ell) + 1):
            child = index + (ell, i)
            tau = t + span * uniform_time(ctx, child)
            x_fine_tau, x_fine_T = euler_states(ctx, child, problem, fine_steps, t, x, (tau, T))
            if ell >= 1:
                x_coarse_tau, x_coarse_T = euler_states(ctx, child, problem, coarse_steps, t, x, (tau, T))

            g_fine = g(x_fine_T)
            counters.g_evals += 1
            f_fine = f(_evaluate(ctx, child, problem, ell, m, memoize, tau, x_fine_tau))
            counters.f_evals += 1
            if ell == 0:
                term = g_fine + span * f_fine
            else:
                g_coarse = g(x_coarse_T)
                counters.g_evals += 1
                f_coarse = f(_evaluate(ctx, index + (ell, -i), problem, ell - 1, m, memoize,
                                       tau, x_coarse_tau))
                counters.f_evals += 1
                term = (g_fine - g_coarse) + (span * f_fine - span * f_coarse)
            if budget is not None and counters.f_evals > budget:
                raise BudgetExceededError(budget, counters.f_evals)
            terms.append(term)
        blocks.append(_block_mean(terms))

    value = math.fsum(blocks)
    if memoize:
        ctx.u_memo[key] = value
    return value


def evaluate_u(ctx: RealizationContext, index, problem, config: MlpConfig,
               t: float, x) -> float:
    """One realization of ``U_{n,m}^index(t, x)`` within ``ctx``."""
    if ctx.T != problem.T:
        raise ValueError(f"context horizon {ctx.T} differs from problem horizon {problem.T}")
    if not 0.0 <= t <= ctx.T:
        raise ValueError(f"time {t} outside [0, {ctx.T}]")
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise ValueError(f"state must have shape ({problem.d},), got {x.shape}")
    return _evaluate(ctx, as_index(index), problem, config.n, config.m, config.memoize, float(t), x)
