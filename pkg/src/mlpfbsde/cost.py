"""Operation counters, cost recursions and the base schedule M(n).

All recursions use Python integers, so they never overflow.

Counter mapping used throughout the package (one unit per operation):

* ``f_evals`` / ``g_evals`` -- evaluations of the driver and the terminal
  condition. Per summand ``(l, i)`` of the recursion there are at most four
  of them, which is the ``4 a1`` part of the model with ``a1 = 1``.
* ``mu_evals``, ``sigma_evals``, ``scalar_rv_draws`` -- the work of one
  coupled Euler pair plus the uniform time draw. For a summand at level
  ``l`` this is bounded by ``(3 d + 5) m**l``, so the measured total never
  exceeds :func:`cost_recursion_u` with ``a1 = 1, a2 = 3 d + 5``
  (see :meth:`CostModel.for_counters`).
* the forward skeleton of the multigrid estimator costs at most ``d + 2``
  units per finest-grid step, hence ``a3 = d + 2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache


@dataclass
class CostCounters:
    scalar_rv_draws: int = 0
    f_evals: int = 0
    g_evals: int = 0
    mu_evals: int = 0
    sigma_evals: int = 0

    def total(self) -> int:
        return (self.scalar_rv_draws + self.f_evals + self.g_evals
                + self.mu_evals + self.sigma_evals)

    def __add__(self, other: "CostCounters") -> "CostCounters":
        return CostCounters(**{k: v + getattr(other, k) for k, v in asdict(self).items()})

    def copy(self) -> "CostCounters":
        return CostCounters(**asdict(self))

    def as_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total()
        return out


@dataclass(frozen=True)
class CostModel:
    """Unit costs of the recursive cost model.

    ``a1`` is charged per f or g evaluation, ``a2 * m**l`` per coupled Euler
    pair at level ``l`` and ``a3`` per step of the forward skeleton.
    """

    a1: int = 1
    a2: int = 1
    a3: int = 1
    d: int = 1

    def __post_init__(self):
        for name in ("a1", "a2", "a3"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.d < 1:
            raise ValueError("d must be positive")

    @classmethod
    def for_counters(cls, d: int) -> "CostModel":
        """Model whose predictions dominate the measured counters in dimension d."""
        return cls(a1=1, a2=3 * d + 5, a3=d + 2, d=d)


def _check(n, m):
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")


@lru_cache(maxsize=None)
def _recursion(n: int, m: int, a1: int, a2: int) -> int:
    if n <= 0:
        return 0
    total = 0
    for ell in range(n):
        inner = 4 * a1 + a2 * m**ell + _recursion(ell, m, a1, a2)
        if ell >= 1:
            inner += _recursion(ell - 1, m, a1, a2)
        total += m ** (n - ell) * inner
    return total


def cost_recursion_u(n: int, m: int, model: CostModel) -> int:
    """Cost of one realization of U_{n,m}, recursion taken with equality."""
    _check(n, m)
    return _recursion(n, m, model.a1, model.a2)


def cost_closed_bound(n: int, m: int, model: CostModel) -> int:
    """Closed-form bound ``max(4 a1, a2 n) (5 m)**n``."""
    _check(n, m)
    return max(4 * model.a1, model.a2 * n) * (5 * m) ** n


def cost_total(n: int, m: int, model: CostModel) -> int:
    """Cost of one realization of the multigrid path on the finest grid."""
    _check(n, m)
    total = model.a3 * (m**n + 1)
    for ell in range(n):
        total += (m ** (ell + 1) + 1) * cost_recursion_u(n - ell, m, model)
    return total


def m_schedule(n: int) -> int:
    """M(n) = floor(sqrt(ln n)) + 1, so that M(n) - sqrt(ln n) lies in (0, 1]."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return math.floor(math.sqrt(math.log(n))) + 1


@dataclass
class CostReport:
    n: int
    m: int
    measured: CostCounters
    recursion_bound: int
    closed_bound: int
    total_bound: int

    @classmethod
    def build(cls, n: int, m: int, measured: CostCounters, model: CostModel) -> "CostReport":
        return cls(n=n, m=m, measured=measured.copy(),
                   recursion_bound=cost_recursion_u(n, m, model),
                   closed_bound=cost_closed_bound(n, m, model),
                   total_bound=cost_total(n, m, model))

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "measured": self.measured.as_dict(),
            "recursion_bound": self.recursion_bound,
            "closed_bound": self.closed_bound,
            "total_bound": self.total_bound,
        }
