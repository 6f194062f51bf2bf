"""Deterministic reference solver for ``u = Phi(u)`` on a tensor grid.

    Phi(u)(t, x) = E[g(X_T^{t,x})] + int_t^T E[f(u(r, X_r^{t,x}))] dr

for forward families with closed-form Gaussian (or log-Gaussian) kernels.
Expectations use tensorized Gauss-Hermite quadrature, the time integral the
composite trapezoid rule on uniform time nodes, and ``f(u(r, .))`` is
extended off the space nodes by natural cubic splines in each dimension.

Because the kernels only depend on the time gap, each gap gets one linear
operator ``K_h`` (nodes -> expectations at nodes); a Picard sweep is then a
handful of matrix products. Diagonal covariances factor ``K_h`` into one
small matrix per dimension.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import make_interp_spline

from .errors import UnsupportedProblemError

log = logging.getLogger(__name__)

TABLE_VERSION = 1
_SMALL_RATE = 1e-8


def transition_moments(problem, s: float, t: float, x) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``X_t`` given ``X_s = x``."""
    if t < s:
        raise ValueError("need s <= t")
    fam = problem.family
    if fam is None:
        raise UnsupportedProblemError(f"no closed-form kernel for problem {problem.name!r}")
    x = np.asarray(x, dtype=float)
    h = t - s
    if fam.kind == "brownian":
        return x + fam.drift * h, fam.vol @ fam.vol.T * h
    if fam.kind == "ou":
        k = fam.kappa
        if 2 * k * h < _SMALL_RATE:
            var_factor = h * (1.0 - k * h)
        else:
            var_factor = -math.expm1(-2 * k * h) / (2 * k)
        return x * math.exp(-k * h), fam.vol @ fam.vol.T * var_factor
    if fam.kind == "gbm":
        mean = x * math.exp(fam.rate * h)
        var = x**2 * math.exp(2 * fam.rate * h) * math.expm1(fam.gbm_vol**2 * h)
        return mean, np.atleast_2d(var)
    raise UnsupportedProblemError(f"unknown forward family {fam.kind!r}")


@dataclass
class OracleGrid:
    time_nodes: np.ndarray
    space_nodes: list
    order: int
    values: Optional[np.ndarray] = None
    residual: float = math.inf
    iterations: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.time_nodes = np.asarray(self.time_nodes, dtype=float)
        self.space_nodes = [np.asarray(a, dtype=float) for a in self.space_nodes]
        if len(self.time_nodes) < 2 or self.time_nodes[0] != 0.0:
            raise ValueError("time nodes must start at 0 and contain T")
        if not np.all(np.diff(self.time_nodes) > 0):
            raise ValueError("time nodes must be strictly ascending")
        if any(len(a) < 4 for a in self.space_nodes):
            raise ValueError("cubic splines need at least four nodes per dimension")
        if self.order < 16:
            raise ValueError("Gauss-Hermite order must be >= 16")

    @property
    def d(self) -> int:
        return len(self.space_nodes)

    @property
    def T(self) -> float:
        return float(self.time_nodes[-1])

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.space_nodes)

    def node_points(self) -> np.ndarray:
        """All space nodes as an array of shape ``(prod(shape), d)``, C order."""
        mesh = np.meshgrid(*self.space_nodes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def gauss_hermite(self) -> tuple[np.ndarray, np.ndarray]:
        """One-dimensional rule for weight ``exp(-z^2)``; weights sum to ``sqrt(pi)``."""
        return hermgauss(self.order)

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss-Hermite rule for ``E[h(Z)]``, ``Z ~ N(0, I_d)``."""
        z, w = hermgauss(self.order)
        nodes = np.array(list(itertools.product(math.sqrt(2.0) * z, repeat=self.d)))
        weights = np.array([math.prod(c) for c in itertools.product(w / math.sqrt(math.pi), repeat=self.d)])
        return nodes, weights

    def space_value(self, k: int, x) -> float:
        """Spline interpolant of the values at time node ``k``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo = np.array([a[0] for a in self.space_nodes])
        hi = np.array([a[-1] for a in self.space_nodes])
        if (x < lo).any() or (x > hi).any():
            log.warning("oracle: query %s outside the grid box, clamped", x.tolist())
            x = np.clip(x, lo, hi)
        basis = _cardinal_rows(self.space_nodes, x[None, :])
        return float((basis @ self.values[k].ravel())[0])

    def value(self, t: float, x) -> float:
        """Value at ``(t, x)``: linear in time between nodes, spline in space."""
        if self.values is None:
            raise ValueError("grid has no values yet")
        tn = self.time_nodes
        if not tn[0] <= t <= tn[-1]:
            raise ValueError(f"time {t} outside [0, {tn[-1]}]")
        k = int(np.searchsorted(tn, t, side="right")) - 1
        if k >= len(tn) - 1 or tn[k] == t:
            return self.space_value(min(k, len(tn) - 1), x)
        w = (t - tn[k]) / (tn[k + 1] - tn[k])
        return (1 - w) * self.space_value(k, x) + w * self.space_value(k + 1, x)


def make_grid(problem, time_steps: int = 32, space_points: Optional[int] = None,
              order: int = 20, center=None, width_sds: float = 6.0) -> OracleGrid:
    """Uniform time nodes and a symmetric space box of ``width_sds`` kernel deviations."""
    if problem.family is None:
        raise UnsupportedProblemError(f"no oracle for problem {problem.name!r}")
    d = problem.d
    if d > 3:
        raise UnsupportedProblemError("oracle grids are limited to d <= 3")
    if space_points is None:
        space_points = {1: 81, 2: 31, 3: 13}[d]
    T = problem.T
    fam = problem.family
    if fam.kind == "gbm":
        x0 = 1.0 if center is None else float(np.atleast_1d(center)[0])
        if x0 <= 0:
            raise ValueError("gbm oracle needs a positive center")
        spread = width_sds * abs(fam.gbm_vol) * math.sqrt(T) + abs(fam.rate - 0.5 * fam.gbm_vol**2) * T
        spread = max(spread, 0.5)
        nodes = [np.linspace(x0 * math.exp(-spread), x0 * math.exp(spread), space_points)]
    else:
        c = np.zeros(d) if center is None else np.broadcast_to(np.asarray(center, dtype=float), (d,))
        _, cov = transition_moments(problem, 0.0, T, c)
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        shift = np.abs(fam.drift) * T if fam.kind == "brownian" else np.zeros(d)
        half = np.maximum(width_sds * sd + shift, 1.0)
        nodes = [np.linspace(c[a] - half[a], c[a] + half[a], space_points) for a in range(d)]
    return OracleGrid(np.linspace(0.0, T, time_steps + 1), nodes, order)


# kernels ----------------------------------------------------------------------

@lru_cache(maxsize=64)
def _cardinal_cached(key: bytes, size: int):
    nodes = np.frombuffer(key, dtype=float)
    spline = make_interp_spline(nodes, np.eye(size), k=3, bc_type="natural")
    return spline, spline.derivative()


def _basis(nodes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Cardinal natural-spline values at ``points``, shape ``(len(points), len(nodes))``.

    Beyond the node range the spline continues linearly with its end slope,
    which a natural spline (zero end curvature) joins smoothly; affine data
    is therefore reproduced everywhere.
    """
    spline, slope = _cardinal_cached(np.ascontiguousarray(nodes, dtype=float).tobytes(), len(nodes))
    lo, hi = nodes[0], nodes[-1]
    inside = np.clip(points, lo, hi)
    out = spline(inside)
    below, above = points < lo, points > hi
    if below.any():
        out[below] = spline(lo) + (points[below] - lo)[:, None] * slope(lo)
    if above.any():
        out[above] = spline(hi) + (points[above] - hi)[:, None] * slope(hi)
    return out


def _cardinal_rows(space_nodes, points: np.ndarray) -> np.ndarray:
    """Rows of the tensor spline basis at ``points`` (shape ``(N, prod(shape))``)."""
    rows = None
    for a, nodes in enumerate(space_nodes):
        s = _basis(nodes, points[:, a])
        rows = s if rows is None else (rows[:, :, None] * s[:, None, :]).reshape(len(points), -1)
    return rows


def _mean_map(problem, h: float, nodes: np.ndarray, axis: int) -> np.ndarray:
    fam = problem.family
    if fam.kind == "brownian":
        return nodes + fam.drift[axis] * h
    return nodes * math.exp(-fam.kappa * h)


def _separable(problem) -> bool:
    fam = problem.family
    if fam.kind == "gbm":
        return True
    vv = fam.vol @ fam.vol.T
    return np.count_nonzero(vv - np.diag(np.diag(vv))) == 0


def _gap_operator(problem, grid: OracleGrid, h: float):
    """Linear map from node values at time ``r`` to expectations at time ``r - h``."""
    z, w = hermgauss(grid.order)
    z = math.sqrt(2.0) * z
    w = w / math.sqrt(math.pi)
    fam = problem.family
    if h == 0.0:
        return ("sep", [np.eye(len(a)) for a in grid.space_nodes])
    if _separable(problem):
        mats = []
        for a, nodes in enumerate(grid.space_nodes):
            if fam.kind == "gbm":
                drift = (fam.rate - 0.5 * fam.gbm_vol**2) * h
                pts = nodes[:, None] * np.exp(drift + fam.gbm_vol * math.sqrt(h) * z[None, :])
            else:
                _, cov = transition_moments(problem, 0.0, h, np.zeros(problem.d))
                sd = math.sqrt(max(cov[a, a], 0.0))
                pts = _mean_map(problem, h, nodes, a)[:, None] + sd * z[None, :]
            basis = _basis(nodes, pts.ravel()).reshape(len(nodes), len(z), len(nodes))
            mats.append(np.einsum("q,gqk->gk", w, basis))
        return ("sep", mats)
    # correlated Gaussian kernel: dense operator
    _, cov = transition_moments(problem, 0.0, h, np.zeros(problem.d))
    evals, evecs = np.linalg.eigh(cov)
    root = evecs * np.sqrt(np.maximum(evals, 0.0))
    qz, qw = grid.quadrature()
    nodes = grid.node_points()
    means = np.stack([_mean_map(problem, h, nodes[:, a], a) for a in range(problem.d)], axis=-1)
    dense = np.empty((len(nodes), len(nodes)))
    for p, mean in enumerate(means):
        dense[p] = qw @ _cardinal_rows(grid.space_nodes, mean + qz @ root.T)
    return ("dense", dense)


def _apply(op, values: np.ndarray) -> np.ndarray:
    kind, data = op
    if kind == "dense":
        return (data @ values.ravel()).reshape(values.shape)
    out = values
    for a, mat in enumerate(data):
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [a])), 0, a)
    return out


def _node_map(fn, points: np.ndarray, shape: tuple) -> np.ndarray:
    return np.array([fn(p) for p in points], dtype=float).reshape(shape)


def _terminal_expectations(problem, grid: OracleGrid, g_nodes: np.ndarray, ops: dict) -> np.ndarray:
    """``E[g(X_T) | X_{t_i} = x]`` at every node: direct quadrature of g when affordable."""
    tn = grid.time_nodes
    T = grid.T
    out = np.empty((len(tn),) + grid.shape)
    out[-1] = g_nodes
    nodes = grid.node_points()
    qz, qw = grid.quadrature()
    direct = len(nodes) * len(qw) * (len(tn) - 1) <= 2_000_000
    fam = problem.family
    for i in range(len(tn) - 1):
        h = T - tn[i]
        if not direct:
            out[i] = _apply(ops[_gap_key(h)], g_nodes)
            continue
        if fam.kind == "gbm":
            drift = (fam.rate - 0.5 * fam.gbm_vol**2) * h
            pts = nodes[:, None, :] * np.exp(drift + fam.gbm_vol * math.sqrt(h) * qz[None, :, :])
        else:
            _, cov = transition_moments(problem, 0.0, h, np.zeros(problem.d))
            evals, evecs = np.linalg.eigh(cov)
            root = evecs * np.sqrt(np.maximum(evals, 0.0))
            means = np.stack([_mean_map(problem, h, nodes[:, a], a) for a in range(problem.d)], axis=-1)
            pts = means[:, None, :] + (qz @ root.T)[None, :, :]
        gv = np.array([[problem.g(y) for y in row] for row in pts])
        out[i] = (gv @ qw).reshape(grid.shape)
    return out


def _gap_key(h: float) -> float:
    return round(h, 12)


def _check_supported(problem, grid: OracleGrid):
    if problem.family is None:
        raise UnsupportedProblemError(f"no oracle for problem {problem.name!r}")
    if grid.d != problem.d:
        raise ValueError("grid and problem dimensions differ")
    if abs(grid.T - problem.T) > 1e-12 * problem.T:
        raise ValueError("grid horizon differs from the problem horizon")


@dataclass
class _Discretization:
    ops: dict
    g_nodes: np.ndarray
    terminal: np.ndarray
    weights: np.ndarray  # trapezoid weights, weights[i, j] for r_j >= t_i


def _discretize(problem, grid: OracleGrid) -> _Discretization:
    _check_supported(problem, grid)
    tn = grid.time_nodes
    nt = len(tn)
    gaps = {_gap_key(tn[j] - tn[i]) for i in range(nt) for j in range(i, nt)}
    ops = {h: _gap_operator(problem, grid, h) for h in sorted(gaps)}
    g_nodes = _node_map(problem.g, grid.node_points(), grid.shape)
    terminal = _terminal_expectations(problem, grid, g_nodes, ops)
    weights = np.zeros((nt, nt))
    for i in range(nt - 1):
        for j in range(i, nt):
            left = tn[j] - tn[j - 1] if j > i else 0.0
            right = tn[j + 1] - tn[j] if j < nt - 1 else 0.0
            weights[i, j] = 0.5 * (left + right)
    return _Discretization(ops, g_nodes, terminal, weights)


def _sweep(problem, grid: OracleGrid, disc: _Discretization, u: np.ndarray) -> np.ndarray:
    tn = grid.time_nodes
    nt = len(tn)
    fu = np.vectorize(problem.f, otypes=[float])(u)
    new = np.empty_like(u)
    new[-1] = disc.g_nodes
    for i in range(nt - 1):
        acc = np.zeros(grid.shape)
        for j in range(i, nt):
            acc += disc.weights[i, j] * _apply(disc.ops[_gap_key(tn[j] - tn[i])], fu[j])
        new[i] = disc.terminal[i] + acc
    return new


def picard_reference(problem, grid: OracleGrid, iterations: int = 200, tol: float = 1e-10,
                     initial: Optional[np.ndarray] = None) -> OracleGrid:
    """Iterate ``u <- Phi(u)`` from ``u = 0`` until the sup change drops below ``tol``.

    Returns a copy of ``grid`` carrying the values, the last sup change
    (``residual``), the sweep count and the history of sup changes. Hitting
    the iteration cap is reported through the residual, not raised.
    """
    disc = _discretize(problem, grid)
    nt = len(grid.time_nodes)
    u = np.zeros((nt,) + grid.shape) if initial is None else np.array(initial, dtype=float)
    u[-1] = disc.g_nodes
    history = []
    residual = math.inf
    sweeps = 0
    for sweeps in range(1, iterations + 1):
        new = _sweep(problem, grid, disc, u)
        residual = float(np.max(np.abs(new - u)))
        history.append(residual)
        u = new
        if residual < tol:
            break
    if residual >= tol:
        log.warning("oracle: no convergence after %d sweeps (residual %.3g)", sweeps, residual)
    return replace(grid, values=u, residual=residual, iterations=sweeps, history=history)


def apply_phi(problem, grid: OracleGrid, values: np.ndarray) -> np.ndarray:
    """One application of the discrete ``Phi`` to a node table."""
    disc = _discretize(problem, grid)
    return _sweep(problem, grid, disc, np.asarray(values, dtype=float))


def refine(grid: OracleGrid, extra_order: int = 8) -> OracleGrid:
    """Twice as many time steps and a higher quadrature order on the same space nodes."""
    tn = grid.time_nodes
    mids = 0.5 * (tn[:-1] + tn[1:])
    fine = np.sort(np.concatenate([tn, mids]))
    return OracleGrid(fine, grid.space_nodes, grid.order + extra_order)


def refinement_bound(problem, grid: OracleGrid, iterations: int = 200, tol: float = 1e-10) -> float:
    """Largest change at the shared nodes when :func:`refine` is applied once."""
    if grid.values is None:
        grid = picard_reference(problem, grid, iterations, tol)
    fine = picard_reference(problem, refine(grid), iterations, tol)
    return float(np.max(np.abs(fine.values[::2] - grid.values)))


# table export -----------------------------------------------------------------

def export_table(grid: OracleGrid) -> str:
    """CSV with a ``#`` header line and columns ``t, x1..xd, u`` (C order over nodes)."""
    if grid.values is None:
        raise ValueError("grid has no values yet")
    buf = io.StringIO()
    buf.write(f"# mlpfbsde-oracle-table version={TABLE_VERSION} d={grid.d} order={grid.order} "
              f"residual={grid.residual!r} iterations={grid.iterations}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{a + 1}" for a in range(grid.d)] + ["u"])
    nodes = grid.node_points()
    for k, t in enumerate(grid.time_nodes):
        for p, val in zip(nodes, grid.values[k].ravel()):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in p] + [repr(float(val))])
    return buf.getvalue()


def import_table(text: str) -> OracleGrid:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# mlpfbsde-oracle-table"):
        raise ValueError("not an oracle table")
    meta = dict(item.split("=", 1) for item in lines[0][2:].split()[1:])
    if int(meta["version"]) != TABLE_VERSION:
        raise ValueError(f"unsupported table version {meta['version']}")
    d = int(meta["d"])
    rows = list(csv.reader(lines[1:]))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    times = np.unique(data[:, 0])
    space = [np.unique(data[:, 1 + a]) for a in range(d)]
    shape = (len(times),) + tuple(len(a) for a in space)
    grid = OracleGrid(times, space, int(meta["order"]), values=data[:, -1].reshape(shape),
                      residual=float(meta["residual"]), iterations=int(meta["iterations"]))
    return grid
