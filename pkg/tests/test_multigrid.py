import csv
import io
import json

import numpy as np
import pytest

from mlpfbsde.mlp import MlpConfig, evaluate_u
from mlpfbsde.multigrid import (ceil_grid, floor_grid, interpolate_y, path_values, reference_values,
                                simulate_y_path, to_csv, to_json)
from mlpfbsde.problem import make_builtin
from mlpfbsde.rng import RealizationContext


def test_floor_grid_examples():
    assert floor_grid(0.0, 4, 1.0) == 0.0
    assert floor_grid(1.0, 4, 1.0) == 0.75
    assert floor_grid(0.6, 2, 1.0) == 0.5
    assert floor_grid(0.5, 2, 1.0) == 0.5


def test_ceil_grid_examples():
    assert ceil_grid(1.0, 4, 1.0) == 1.0
    assert ceil_grid(0.0, 4, 1.0) == 0.25
    assert ceil_grid(0.5, 2, 1.0) == 1.0
    with pytest.raises(ValueError):
        ceil_grid(1.2, 2, 1.0)


def test_floor_ceil_odd_horizon():
    T = 0.3
    for m in (3, 7, 9):
        for k in range(m):
            t = T * k / m
            assert floor_grid(t, m, T) <= t < ceil_grid(t, m, T)


def _path(problem, n, m, seed=1, x0=None):
    ctx = RealizationContext(seed, problem.d, problem.T)
    return ctx, simulate_y_path(ctx, problem, MlpConfig(n, m), x0)


def test_shapes():
    p = make_builtin("ou_linear", 2, {"alpha": 0.3})
    _, est = _path(p, 3, 2)
    assert est.forward_skeleton.shape == (9, 2)
    np.testing.assert_array_equal(est.forward_skeleton[0], np.zeros(2))
    for ell, (fine, coarse) in enumerate(est.level_values):
        assert len(fine) == 2 ** (ell + 1) + 1
        assert (coarse is None) == (ell == 0)
        if coarse is not None:
            assert len(coarse) == 2**ell + 1


def test_degenerate_path_exact_everywhere():
    p = make_builtin("degenerate_constant", 1, {"beta": 1.5, "g": "cos"})
    x0 = np.array([0.4])
    _, est = _path(p, 3, 3, x0=x0)
    for t in np.linspace(0, 1, 41):
        assert interpolate_y(est, t) == pytest.approx(p.exact_u(t, x0), abs=1e-12)


def test_terminal_and_initial_identities():
    p = make_builtin("arithmetic_bm_linear", 2, {"alpha": 0.5, "beta": 1.0})
    for n, m in ((1, 2), (3, 2), (2, 3)):
        ctx, est = _path(p, n, m, seed=n * m)
        assert interpolate_y(est, 1.0) == p.g(est.forward_skeleton[-1])
        direct = evaluate_u(ctx, (0,), p, MlpConfig(n, m), 0.0, est.x0)
        assert interpolate_y(est, 0.0) == direct


def test_node_values_reproduced():
    p = make_builtin("ou_linear", 1, {"alpha": 0.5, "beta": 0.2})
    _, est = _path(p, 1, 3)
    fine, _ = est.level_values[0]
    for k, t in enumerate((0.0, 1 / 3, 2 / 3, 1.0)):
        assert interpolate_y(est, t) == fine[k]
    mid = interpolate_y(est, 0.5)
    assert mid == pytest.approx(0.5 * (fine[1] + fine[2]))


def test_telescoping_at_coarse_nodes():
    # at an m^l node, term l-1 (fine grid m^l) and term l (coarse grid m^l) use stored values only
    p = make_builtin("arithmetic_bm_linear", 1, {"alpha": 0.5, "beta": 1.0})
    _, est = _path(p, 3, 2)
    for t in (0.0, 0.5, 1.0):
        k = int(round(t * 2))
        total = est.level_values[0][0][k]
        total += est.level_values[1][0][2 * k] - est.level_values[1][1][k]
        total += est.level_values[2][0][4 * k] - est.level_values[2][1][2 * k]
        assert interpolate_y(est, t) == pytest.approx(total, abs=1e-15)


def test_weights_partition_of_unity():
    p = make_builtin("degenerate_constant", 1, {"beta": 0.0, "g": "sum"})
    _, est = _path(p, 2, 3, x0=np.array([2.0]))
    for t in np.linspace(0, 1, 37):
        assert interpolate_y(est, t) == pytest.approx(2.0, abs=1e-14)


def test_index_hygiene():
    p = make_builtin("ou_linear", 1, {"alpha": 0.5})
    ctx, _ = _path(p, 2, 2)
    for idx in set(ctx.uniform_cache) | set(ctx.path_cache):
        assert idx == (0,) or idx[0] in (0, 1)
    assert (0,) in ctx.path_cache and (0,) not in ctx.uniform_cache
    for idx in ctx.uniform_cache:
        assert len(idx) >= 3


def test_interpolate_range_check():
    p = make_builtin("ou_linear", 1)
    _, est = _path(p, 1, 2)
    with pytest.raises(ValueError):
        interpolate_y(est, -0.1)


def test_n_zero_rejected():
    p = make_builtin("ou_linear", 1)
    with pytest.raises(ValueError):
        simulate_y_path(RealizationContext(0, 1, 1.0), p, MlpConfig(0, 2))


def test_exports():
    p = make_builtin("arithmetic_bm_linear", 1, {"alpha": 0.5, "beta": 1.0})
    _, est = _path(p, 2, 2)
    rows = list(csv.reader(io.StringIO(to_csv(est, p))))
    assert rows[0] == ["t", "Y", "u_ref", "abs_err"]
    assert len(rows) == 1 + 5
    assert float(rows[-1][3]) == 0.0
    doc = json.loads(to_json(est, p))
    assert doc["schema_version"] == 1
    assert doc["Y"] == path_values(est).tolist()
    assert doc["u_ref"] == reference_values(est, p).tolist()
    assert doc["cost"]["measured"]["f_evals"] == est.counters.f_evals
    q = make_builtin("bm_sine_driver", 1)
    _, est2 = _path(q, 1, 2)
    assert to_csv(est2, q).splitlines()[0] == "t,Y"


def test_measured_cost_within_total_bound():
    for d in (1, 3):
        p = make_builtin("ou_linear", d, {"alpha": 0.5})
        for n in (1, 2, 3):
            for m in (1, 2, 3):
                ctx = RealizationContext(n, d, 1.0)
                est = simulate_y_path(ctx, p, MlpConfig(n, m, memoize=False))
                assert est.counters.total() <= est.cost.total_bound
