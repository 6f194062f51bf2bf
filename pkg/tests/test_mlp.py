import numpy as np
import pytest

from mlpfbsde.errors import BudgetExceededError
from mlpfbsde.mlp import MlpConfig, evaluate_u
from mlpfbsde.problem import make_builtin
from mlpfbsde.rng import RealizationContext


def test_config_validation():
    with pytest.raises(ValueError):
        MlpConfig(-1, 2)
    with pytest.raises(ValueError):
        MlpConfig(2, 0)


def test_level_zero_is_zero(bm_linear):
    ctx = RealizationContext(0, 1, 1.0)
    assert evaluate_u(ctx, (0,), bm_linear, MlpConfig(0, 3), 0.2, [1.0]) == 0.0
    assert ctx.counters.total() == 0


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_degenerate_exact(degenerate, n, m):
    x = np.array([0.3, -0.4])
    ctx = RealizationContext(n + 10 * m, 2, 1.0)
    for t in (0.0, 0.35, 1.0):
        u = evaluate_u(ctx, (0,), degenerate, MlpConfig(n, m), t, x)
        assert u == pytest.approx(degenerate.exact_u(t, x), abs=1e-12)


@pytest.mark.parametrize("name", ["arithmetic_bm_linear", "ou_linear", "bm_sine_driver"])
def test_terminal_identity(name):
    p = make_builtin(name, 2, {"alpha": 0.5, "beta": 1.0})
    x = np.array([0.7, -0.2])
    for n, m in ((1, 1), (2, 3), (4, 2)):
        u = evaluate_u(RealizationContext(n, 2, 1.0), (0,), p, MlpConfig(n, m), 1.0, x)
        assert u == p.g(x)


def test_field_consistency(bm_linear):
    ctx = RealizationContext(4, 1, 1.0)
    cfg = MlpConfig(3, 2)
    a = evaluate_u(ctx, (0,), bm_linear, cfg, 0.1, [0.5])
    assert evaluate_u(ctx, (0,), bm_linear, cfg, 0.1, [0.5]) == a
    ctx2 = RealizationContext(4, 1, 1.0)
    assert evaluate_u(ctx2, (0,), bm_linear, MlpConfig(3, 2, memoize=False), 0.1, [0.5]) == a


def test_reproducible_across_contexts(bm_linear):
    vals = [evaluate_u(RealizationContext(9, 1, 1.0), (0,), bm_linear, MlpConfig(3, 2), 0.0, [0.0])
            for _ in range(2)]
    assert vals[0] == vals[1]


def test_descendant_only_randomness(bm_linear):
    ctx = RealizationContext(4, 1, 1.0)
    evaluate_u(ctx, (5,), bm_linear, MlpConfig(3, 2), 0.0, [0.0])
    assert not ctx.touched((5,))
    touched = set(ctx.uniform_cache) | set(ctx.path_cache)
    assert touched and all(len(i) > 1 and i[0] == 5 for i in touched)


def test_sibling_children_distinct(bm_linear):
    ctx = RealizationContext(4, 1, 1.0)
    evaluate_u(ctx, (0,), bm_linear, MlpConfig(3, 2), 0.0, [0.0])
    # the (theta, 2, -i) children carry U_1 and draw their own randomness
    assert (0, 2, 1, 0, 1) in ctx.path_cache
    assert (0, 2, -1, 0, 1) in ctx.path_cache
    assert (0, 1, -1) not in ctx.path_cache


def test_budget_guard(bm_linear):
    ctx = RealizationContext(4, 1, 1.0, f_budget=10)
    with pytest.raises(BudgetExceededError) as info:
        evaluate_u(ctx, (0,), bm_linear, MlpConfig(4, 3), 0.0, [0.0])
    assert info.value.used > 10


def test_input_checks(bm_linear):
    ctx = RealizationContext(4, 1, 1.0)
    with pytest.raises(ValueError):
        evaluate_u(ctx, (0,), bm_linear, MlpConfig(1, 1), 1.5, [0.0])
    with pytest.raises(ValueError):
        evaluate_u(ctx, (0,), bm_linear, MlpConfig(1, 1), 0.5, [0.0, 0.0])
    with pytest.raises(ValueError):
        evaluate_u(RealizationContext(4, 1, 2.0), (0,), bm_linear, MlpConfig(1, 1), 0.5, [0.0])


def test_n1_m1_single_sample_formula():
    # U_{1,1}(t,x) = g(X_T) + (T-t) f(0), one-step Euler to T
    p = make_builtin("arithmetic_bm_linear", 1, {"alpha": 2.0, "beta": 0.5, "a": 0.1})
    ctx = RealizationContext(3, 1, 1.0)
    u = evaluate_u(ctx, (0,), p, MlpConfig(1, 1), 0.2, [1.0])
    w = ctx.path_cache[(0, 0, 1)].values
    x_T = 1.0 + 0.1 * 0.8 + (w[1.0][0] - w[0.2][0])
    assert u == pytest.approx(x_T + 0.8 * 0.5, abs=1e-14)


def test_error_shrinks_with_levels():
    p = make_builtin("arithmetic_bm_linear", 1, {"alpha": 1.0, "beta": 1.0})
    ref = p.exact_u(0.0, np.zeros(1))
    def rmse(n):
        vals = [evaluate_u(RealizationContext(k, 1, 1.0), (0,), p, MlpConfig(n, 2), 0.0, np.zeros(1))
                for k in range(1000)]
        return float(np.sqrt(np.mean((np.array(vals) - ref) ** 2)))
    assert rmse(3) < rmse(1)
