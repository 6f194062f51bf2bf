import math
import pickle

import numpy as np
import pytest

from mlpfbsde.errors import ConfigError, MissingExactSolutionError
from mlpfbsde.problem import Problem, ProblemConstants, exact_solution, make_builtin, validate_constants


def test_degenerate_beta_zero_is_g():
    p = make_builtin("degenerate_constant", 3, {"beta": 0.0, "g": "sumsq"})
    x = np.array([1.0, -2.0, 0.5])
    for t in (0.0, 0.3, 1.0):
        assert p.exact_u(t, x) == p.g(x)


def test_bm_linear_value_2e():
    p = make_builtin("arithmetic_bm_linear", 1, {"a": 0.0, "alpha": 1.0, "beta": 0.0, "T": 1.0})
    assert exact_solution(p, 0.0, [2.0]) == pytest.approx(2 * math.e, rel=1e-14)


def test_bm_linear_pure_integral():
    p = make_builtin("arithmetic_bm_linear", 1, {"alpha": 0.0, "beta": 1.0})
    assert exact_solution(p, 0.0, [0.0]) == pytest.approx(1.0, abs=1e-15)


def test_bm_linear_alpha_zero_continuity():
    x = np.array([0.4, -0.1])
    small = make_builtin("arithmetic_bm_linear", 2, {"a": [0.3, 0.1], "alpha": 1e-9, "beta": 2.0})
    zero = make_builtin("arithmetic_bm_linear", 2, {"a": [0.3, 0.1], "alpha": 0.0, "beta": 2.0})
    assert small.exact_u(0.2, x) == pytest.approx(zero.exact_u(0.2, x), abs=1e-8)
    assert zero.exact_u(0.2, x) == pytest.approx(0.3 + 0.4 * 0.8 + 2.0 * 0.8)


def test_ou_mean_value():
    p = make_builtin("ou_linear", 1, {"kappa": 1.0, "s": 1.0, "alpha": 0.0, "beta": 0.0})
    assert exact_solution(p, 0.0, [1.0]) == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_gbm_degenerates_to_deterministic_linear():
    g = make_builtin("gbm_linear", 1, {"a": 0.0, "s": 0.0, "alpha": 0.7, "beta": 0.3})
    b = make_builtin("arithmetic_bm_linear", 1, {"a": 0.0, "s": 0.0, "alpha": 0.7, "beta": 0.3})
    for t in (0.0, 0.25, 0.9):
        assert g.exact_u(t, np.array([1.3])) == b.exact_u(t, np.array([1.3]))


@pytest.mark.parametrize("name", ["degenerate_constant", "arithmetic_bm_linear", "ou_linear", "gbm_linear"])
def test_exact_terminal_condition(name):
    p = make_builtin(name, 1, {"alpha": 0.4, "beta": 1.0, "a": 0.1, "s": 0.3})
    for x in (0.5, 1.0, 2.5):
        assert exact_solution(p, p.T, [x]) == pytest.approx(p.g(np.array([x])), rel=1e-15)


def test_sine_driver_has_no_exact():
    p = make_builtin("bm_sine_driver", 2, {"lambda": 0.5})
    assert p.exact_u is None
    with pytest.raises(MissingExactSolutionError):
        exact_solution(p, 0.0, [0.0, 0.0])
    assert p.g(np.array([0.0, 0.0])) == 1.0
    assert p.f(math.pi / 2) == pytest.approx(0.5)


def test_invalid_inputs():
    with pytest.raises(ConfigError):
        make_builtin("nope", 1)
    with pytest.raises(ConfigError):
        make_builtin("ou_linear", 1, {"kappa": -1.0})
    with pytest.raises(ConfigError):
        make_builtin("gbm_linear", 2)
    with pytest.raises(ConfigError):
        make_builtin("arithmetic_bm_linear", 0)
    with pytest.raises(ConfigError):
        make_builtin("arithmetic_bm_linear", 1, {"T": -1.0})


def test_terminal_mismatch_rejected():
    with pytest.raises(ValueError):
        Problem("bad", 1, 1.0, mu=lambda x: x, sigma=lambda x: x, f=lambda y: y,
                g=lambda x: float(x[0]), exact_u=lambda t, x: float(x[0]) + 1.0)


def test_constants_invariants():
    with pytest.raises(ValueError):
        ProblemConstants(c=0.5)
    with pytest.raises(ValueError):
        ProblemConstants(c=1.0, lipschitz_f=2.0)
    with pytest.raises(ValueError):
        ProblemConstants(lipschitz_mu=-1.0)
    assert ProblemConstants.enveloping(lipschitz_f=3.0).c == 3.0


def test_problems_pickle():
    p = make_builtin("ou_linear", 2, {"kappa": 0.5, "alpha": 0.2})
    q = pickle.loads(pickle.dumps(p))
    x = np.array([0.3, 0.1])
    assert q.exact_u(0.1, x) == p.exact_u(0.1, x)


def test_validate_zero_drift():
    rep = validate_constants(make_builtin("arithmetic_bm_linear", 3))
    assert rep.drift == 0.0
    assert rep.diffusion == 0.0


def test_validate_sine_driver():
    rep = validate_constants(make_builtin("bm_sine_driver", 1, {"lambda": 1.0}))
    assert rep.driver <= 1 + 1e-6
    assert rep.ok


def test_validate_sum_gradient():
    rep = validate_constants(make_builtin("arithmetic_bm_linear", 10))
    assert rep.terminal == pytest.approx(math.sqrt(10), abs=1e-6)


def test_validate_warns_on_understated_constant():
    base = make_builtin("ou_linear", 1, {"kappa": 2.0})
    lied = Problem(base.name, 1, 1.0, base.mu, base.sigma, base.f, base.g,
                   constants=ProblemConstants(c=1.0, lipschitz_mu=1.0, growth_g=1.0))
    rep = validate_constants(lied)
    assert rep.drift == pytest.approx(2.0, rel=1e-6)
    assert any("drift" in w for w in rep.warnings)
