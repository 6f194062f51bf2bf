"""FBSDE problem instances and the built-in catalog.

A problem bundles the forward coefficients ``mu``, ``sigma``, the
z-independent driver ``f`` and the terminal condition ``g`` on ``[0, T]``.
Built-ins with an affine driver and linear ``g`` come with their
closed-form solution ``u(t, x)`` (affine Feynman-Kac formula).

All coefficient callables are ``functools.partial`` objects over module
level functions so problems can be pickled into worker processes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, MissingExactSolutionError

log = logging.getLogger(__name__)

BUILTINS = ("degenerate_constant", "arithmetic_bm_linear", "ou_linear",
            "gbm_linear", "bm_sine_driver", "affine")


@dataclass(frozen=True)
class ProblemConstants:
    c: float = 1.0
    lipschitz_f: float = 0.0
    lipschitz_mu: float = 0.0
    lipschitz_sigma: float = 0.0
    growth_g: float = 0.0

    def __post_init__(self):
        for name in ("c", "lipschitz_f", "lipschitz_mu", "lipschitz_sigma", "growth_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"constant {name} must be nonnegative")
        if self.c < 1:
            raise ValueError("c must be >= 1")
        if self.lipschitz_f > self.c:
            raise ValueError("lipschitz_f must not exceed c")

    @classmethod
    def enveloping(cls, lipschitz_f=0.0, lipschitz_mu=0.0, lipschitz_sigma=0.0, growth_g=0.0):
        """Constants with ``c`` chosen as the smallest admissible envelope."""
        c = max(1.0, lipschitz_f, lipschitz_mu, lipschitz_sigma, growth_g)
        return cls(c, lipschitz_f, lipschitz_mu, lipschitz_sigma, growth_g)


@dataclass(frozen=True)
class ForwardFamily:
    """Closed-form description of the forward diffusion, when there is one.

    ``kind`` is ``"brownian"`` (``mu = drift``, ``sigma = vol`` constant),
    ``"ou"`` (``mu(x) = -kappa x``, ``sigma = vol`` constant) or ``"gbm"``
    (one-dimensional, ``mu(x) = rate x``, ``sigma(x) = vol x``).
    """

    kind: str
    drift: Optional[np.ndarray] = None
    vol: Optional[np.ndarray] = None
    kappa: float = 0.0
    rate: float = 0.0
    gbm_vol: float = 0.0


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    d: int
    T: float
    mu: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    f: Callable[[float], float]
    g: Callable[[np.ndarray], float]
    constants: ProblemConstants = field(default_factory=ProblemConstants)
    exact_u: Optional[Callable[[float, np.ndarray], float]] = None
    family: Optional[ForwardFamily] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.exact_u is not None:
            self._check_terminal()

    def _check_terminal(self, probes: int = 8):
        rng = np.random.default_rng(0)
        for x in rng.standard_normal((probes, self.d)):
            if self.family is not None and self.family.kind == "gbm":
                x = np.abs(x) + 0.5
            u = self.exact_u(self.T, x)
            gx = self.g(x)
            if abs(u - gx) > 1e-10 * max(1.0, abs(gx)):
                raise ValueError(f"exact_u(T, x) = {u} differs from g(x) = {gx} at x = {x}")

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None


def exact_solution(problem: Problem, t: float, x) -> float:
    if problem.exact_u is None:
        raise MissingExactSolutionError(f"problem {problem.name!r} has no closed-form solution")
    if not 0.0 <= t <= problem.T:
        raise ValueError(f"time {t} outside [0, {problem.T}]")
    return float(problem.exact_u(t, np.asarray(x, dtype=float)))


# coefficient building blocks --------------------------------------------

def _const_vector(x, value):
    return value


def _const_matrix(x, value):
    return value


def _linear_drift(x, matrix, offset):
    return offset + matrix @ x


def _scaled_state(x, factor):
    return factor * x


def _scaled_state_matrix(x, factor):
    return (factor * x).reshape(1, 1)


def _affine_scalar(y, alpha, beta):
    return alpha * y + beta


def _sine(y, lam):
    return lam * math.sin(y)


def _g_sum(x):
    return float(np.sum(x))


def _g_weighted(x, w):
    return float(w @ x)


def _g_sumsq(x):
    return float(x @ x)


def _g_cos(x):
    return math.cos(float(np.sum(x)) / math.sqrt(x.shape[0]))


_G_CATALOG = {"sum": _g_sum, "sumsq": _g_sumsq, "cos": _g_cos}


def _affine_growth(alpha, beta, tau):
    """(beta / alpha)(e^{alpha tau} - 1), continuous at alpha = 0."""
    if alpha == 0.0:
        return beta * tau
    return beta * math.expm1(alpha * tau) / alpha


def _u_degenerate(t, x, T, beta, g):
    return g(x) + beta * (T - t)


def _u_affine_mean(t, x, T, alpha, beta, shift, decay):
    """u for g = sum(x), f(y) = alpha y + beta and E[sum X_T] = decay(tau) sum(x) + shift tau."""
    tau = T - t
    mean = math.exp(-decay * tau) * float(np.sum(x)) + shift * tau
    return math.exp(alpha * tau) * mean + _affine_growth(alpha, beta, tau)


def _u_gbm(t, x, T, alpha, beta, rate):
    tau = T - t
    return math.exp(alpha * tau) * float(x[0]) * math.exp(rate * tau) + _affine_growth(alpha, beta, tau)


# catalog ------------------------------------------------------------------

def _num(params, key, default):
    value = params.get(key, default)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"parameter {key!r} must be a number, got {value!r}") from None


def _vector(params, key, default, d):
    value = params.get(key, default)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ConfigError(f"parameter {key!r} must be a scalar or a length-{d} vector")
    return arr


def _matrix(params, key, default, d):
    value = params.get(key, default)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise ConfigError(f"parameter {key!r} must be a scalar or a {d}x{d} matrix")
    return arr


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


def make_builtin(name: str, d: int = 1, params: Optional[dict] = None) -> Problem:
    """Build a catalog problem.

    Recognized parameters: ``T`` (all), ``beta`` and ``g`` (degenerate_constant),
    ``a``, ``s``, ``alpha``, ``beta`` (arithmetic_bm_linear),
    ``kappa``, ``s``, ``alpha``, ``beta`` (ou_linear),
    ``a``, ``s``, ``alpha``, ``beta`` (gbm_linear), ``lambda`` (bm_sine_driver)
    and ``drift_matrix``, ``drift_vector``, ``vol``, ``weights``, ``alpha``,
    ``beta`` (affine, no closed form).
    """
    params = dict(params or {})
    if name not in BUILTINS:
        raise ConfigError(f"unknown problem {name!r}; choose one of {', '.join(BUILTINS)}")
    if int(d) != d or d < 1:
        raise ConfigError(f"d must be a positive integer, got {d}")
    d = int(d)
    T = _num(params, "T", 1.0)
    if not T > 0:
        raise ConfigError("T must be positive")
    zero_vec = _readonly(np.zeros(d))
    zero_mat = _readonly(np.zeros((d, d)))
    eye = _readonly(np.eye(d))

    if name == "degenerate_constant":
        beta = _num(params, "beta", 0.0)
        g = params.get("g", "sum")
        if isinstance(g, str):
            if g not in _G_CATALOG:
                raise ConfigError(f"unknown g {g!r}; choose one of {', '.join(_G_CATALOG)}")
            g = _G_CATALOG[g]
        elif not callable(g):
            raise ConfigError("parameter 'g' must be a name or a callable")
        return Problem(
            name, d, T,
            mu=partial(_const_vector, value=zero_vec),
            sigma=partial(_const_matrix, value=zero_mat),
            f=partial(_affine_scalar, alpha=0.0, beta=beta),
            g=g,
            constants=ProblemConstants.enveloping(),
            exact_u=partial(_u_degenerate, T=T, beta=beta, g=g),
            family=ForwardFamily("brownian", drift=zero_vec, vol=zero_mat),
            params={"T": T, "beta": beta},
        )

    if name == "arithmetic_bm_linear":
        a = _readonly(_vector(params, "a", 0.0, d))
        s = _num(params, "s", 1.0)
        alpha = _num(params, "alpha", 0.0)
        beta = _num(params, "beta", 0.0)
        vol = _readonly(s * np.eye(d))
        return Problem(
            name, d, T,
            mu=partial(_const_vector, value=a),
            sigma=partial(_const_matrix, value=vol),
            f=partial(_affine_scalar, alpha=alpha, beta=beta),
            g=_g_sum,
            constants=ProblemConstants.enveloping(lipschitz_f=abs(alpha), growth_g=math.sqrt(d)),
            exact_u=partial(_u_affine_mean, T=T, alpha=alpha, beta=beta,
                            shift=float(np.sum(a)), decay=0.0),
            family=ForwardFamily("brownian", drift=a, vol=vol),
            params={"T": T, "a": a.tolist(), "s": s, "alpha": alpha, "beta": beta},
        )

    if name == "ou_linear":
        kappa = _num(params, "kappa", 1.0)
        if kappa < 0:
            raise ConfigError("kappa must be nonnegative")
        s = _num(params, "s", 1.0)
        alpha = _num(params, "alpha", 0.0)
        beta = _num(params, "beta", 0.0)
        vol = _readonly(s * np.eye(d))
        return Problem(
            name, d, T,
            mu=partial(_scaled_state, factor=-kappa),
            sigma=partial(_const_matrix, value=vol),
            f=partial(_affine_scalar, alpha=alpha, beta=beta),
            g=_g_sum,
            constants=ProblemConstants.enveloping(lipschitz_f=abs(alpha), lipschitz_mu=kappa,
                                                  growth_g=math.sqrt(d)),
            exact_u=partial(_u_affine_mean, T=T, alpha=alpha, beta=beta, shift=0.0, decay=kappa),
            family=ForwardFamily("ou", vol=vol, kappa=kappa),
            params={"T": T, "kappa": kappa, "s": s, "alpha": alpha, "beta": beta},
        )

    if name == "gbm_linear":
        if d != 1:
            raise ConfigError("gbm_linear is one-dimensional")
        rate = _num(params, "a", 0.0)
        s = _num(params, "s", 0.0)
        alpha = _num(params, "alpha", 0.0)
        beta = _num(params, "beta", 0.0)
        return Problem(
            name, 1, T,
            mu=partial(_scaled_state, factor=rate),
            sigma=partial(_scaled_state_matrix, factor=s),
            f=partial(_affine_scalar, alpha=alpha, beta=beta),
            g=_g_sum,
            constants=ProblemConstants.enveloping(lipschitz_f=abs(alpha), lipschitz_mu=abs(rate),
                                                  lipschitz_sigma=abs(s), growth_g=1.0),
            exact_u=partial(_u_gbm, T=T, alpha=alpha, beta=beta, rate=rate),
            family=ForwardFamily("gbm", rate=rate, gbm_vol=s),
            params={"T": T, "a": rate, "s": s, "alpha": alpha, "beta": beta},
        )

    if name == "bm_sine_driver":
        lam = _num(params, "lambda", 0.5)
        return Problem(
            name, d, T,
            mu=partial(_const_vector, value=zero_vec),
            sigma=partial(_const_matrix, value=eye),
            f=partial(_sine, lam=lam),
            g=_g_cos,
            constants=ProblemConstants.enveloping(lipschitz_f=abs(lam), growth_g=1.0),
            family=ForwardFamily("brownian", drift=zero_vec, vol=eye),
            params={"T": T, "lambda": lam},
        )

    # affine: mu(x) = b + A x, constant sigma, f(y) = alpha y + beta, g(x) = w . x
    A = _readonly(_matrix(params, "drift_matrix", 0.0, d))
    b = _readonly(_vector(params, "drift_vector", 0.0, d))
    vol = _readonly(_matrix(params, "vol", 1.0, d))
    w = _readonly(_vector(params, "weights", 1.0, d))
    alpha = _num(params, "alpha", 0.0)
    beta = _num(params, "beta", 0.0)
    return Problem(
        name, d, T,
        mu=partial(_linear_drift, matrix=A, offset=b),
        sigma=partial(_const_matrix, value=vol),
        f=partial(_affine_scalar, alpha=alpha, beta=beta),
        g=partial(_g_weighted, w=w),
        constants=ProblemConstants.enveloping(lipschitz_f=abs(alpha),
                                              lipschitz_mu=float(np.linalg.norm(A, 2)),
                                              growth_g=float(np.linalg.norm(w))),
        params={"T": T, "drift_matrix": A.tolist(), "drift_vector": b.tolist(),
                "vol": vol.tolist(), "weights": w.tolist(), "alpha": alpha, "beta": beta},
    )


# assumption checks --------------------------------------------------------

@dataclass
class ValidationReport:
    drift: float
    diffusion: float
    driver: float
    terminal: float
    warnings: list

    @property
    def ok(self) -> bool:
        return not self.warnings


def _jacobian(fn, x, h):
    cols = []
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fn(x + e), dtype=float) - np.asarray(fn(x - e), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)


def validate_constants(problem: Problem, probe_count: int = 16, seed: int = 0,
                       step: float = 1e-5) -> ValidationReport:
    """Estimate derivative bounds of the coefficients by central differences.

    Reports the largest observed operator norm of ``D mu``, ``D sigma``
    (Frobenius-valued), ``f'`` and ``grad g`` over random probes. Exceeding a
    declared constant by more than 5% yields a warning, never an error.
    """
    if probe_count < 2:
        raise ValueError("probe_count must be >= 2")
    rng = np.random.default_rng(seed)
    d = problem.d
    xs = rng.standard_normal((probe_count, d))
    if problem.family is not None and problem.family.kind == "gbm":
        xs = np.abs(xs) + 0.5
    ws = 2.0 * rng.standard_normal(probe_count)

    drift = diffusion = driver = terminal = 0.0
    for x, w in zip(xs, ws):
        J = _jacobian(problem.mu, x, step)
        drift = max(drift, float(np.linalg.norm(J, 2)))
        D = _jacobian(problem.sigma, x, step)  # shape (d, d, d)
        diffusion = max(diffusion, float(np.linalg.norm(D.reshape(d * d, d), 2)))
        driver = max(driver, abs(problem.f(w + step) - problem.f(w - step)) / (2 * step))
        grad = _jacobian(lambda y: np.atleast_1d(problem.g(y)), x, step)
        terminal = max(terminal, float(np.linalg.norm(grad)))

    declared = problem.constants
    warnings = []
    for label, seen, bound in (("drift", drift, declared.lipschitz_mu),
                               ("diffusion", diffusion, declared.lipschitz_sigma),
                               ("driver", driver, declared.lipschitz_f),
                               ("terminal", terminal, declared.growth_g)):
        if seen > 1.05 * bound:
            msg = f"{label} derivative estimate {seen:.6g} exceeds declared constant {bound:.6g}"
            log.warning("%s: %s", problem.name, msg)
            warnings.append(msg)
    return ValidationReport(drift, diffusion, driver, terminal, warnings)
