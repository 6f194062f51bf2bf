import math
from functools import lru_cache

import numpy as np
import pytest

from mlpfbsde.cost import (CostCounters, CostModel, CostReport, cost_closed_bound, cost_recursion_u,
                           cost_total, m_schedule)
from mlpfbsde.mlp import MlpConfig, evaluate_u
from mlpfbsde.problem import make_builtin
from mlpfbsde.rng import RealizationContext

UNIT = CostModel(1, 1, 1)


def _brute(n, m, a1, a2):
    # re-expansion without any caching of sub-results
    if n == 0:
        return 0
    return sum(m ** (n - l) * (4 * a1 + a2 * m**l + _brute(l, m, a1, a2)
                               + (_brute(l - 1, m, a1, a2) if l >= 1 else 0))
               for l in range(n))


def test_recursion_small_values():
    assert cost_recursion_u(0, 3, UNIT) == 0
    for m in (1, 2, 5):
        assert cost_recursion_u(1, m, UNIT) == 5 * m


def test_recursion_matches_brute_force():
    assert cost_recursion_u(3, 2, UNIT) == _brute(3, 2, 1, 1)
    assert cost_recursion_u(4, 3, CostModel(2, 3, 1)) == _brute(4, 3, 2, 3)


def test_closed_bound_examples():
    assert cost_closed_bound(1, 1, UNIT) == 20
    assert cost_closed_bound(0, 4, UNIT) == 4


def test_recursion_below_closed_bound_sweep():
    for n in range(0, 9):
        for m in range(1, 6):
            for a1 in (1, 2, 3):
                for a2 in (1, 2, 3):
                    model = CostModel(a1, a2, 1)
                    assert cost_recursion_u(n, m, model) <= cost_closed_bound(n, m, model)


def test_total_examples():
    assert cost_total(1, 1, UNIT) == 12
    for m in (2, 3):
        model = CostModel(1, 2, 3)
        assert cost_total(1, m, model) == 3 * (m + 1) + (m + 1) * cost_recursion_u(1, m, model)


def test_big_values_exact():
    v = cost_closed_bound(40, 5, UNIT)
    assert v == 40 * 25**40
    assert cost_recursion_u(30, 5, UNIT) > 2**64


def test_m_schedule():
    assert m_schedule(1) == 1
    assert m_schedule(3) == 2
    assert m_schedule(60) == 3
    vals = [m_schedule(n) for n in range(1, 5000)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    for n in range(1, 2000):
        gap = m_schedule(n) - math.sqrt(math.log(n))
        assert 0 < gap <= 1
    with pytest.raises(ValueError):
        m_schedule(0)


def test_model_validation():
    with pytest.raises(ValueError):
        CostModel(a1=-1)
    with pytest.raises(ValueError):
        CostModel(a1=1.5)
    with pytest.raises(ValueError):
        cost_recursion_u(-1, 2, UNIT)
    with pytest.raises(ValueError):
        cost_total(1, 0, UNIT)


def test_counters_arithmetic():
    a = CostCounters(1, 2, 3, 4, 5)
    b = a + a
    assert b.total() == 30
    assert a.total() == 15
    assert b.as_dict()["total"] == 30


@pytest.mark.parametrize("name,d", [("arithmetic_bm_linear", 1), ("ou_linear", 3), ("bm_sine_driver", 2)])
def test_measured_counters_below_model(name, d):
    problem = make_builtin(name, d, {"alpha": 0.5, "beta": 1.0})
    for n in (1, 2, 3):
        for m in (1, 2, 3):
            ctx = RealizationContext(n * 10 + m, d, 1.0)
            evaluate_u(ctx, (0,), problem, MlpConfig(n, m, memoize=False), 0.0, np.zeros(d))
            c = ctx.counters
            fg = CostModel(1, 0, 0, d)
            assert c.f_evals + c.g_evals <= cost_recursion_u(n, m, fg)
            assert c.total() <= cost_recursion_u(n, m, CostModel.for_counters(d))


def test_report_as_dict():
    rep = CostReport.build(2, 2, CostCounters(f_evals=3), UNIT)
    d = rep.as_dict()
    assert d["recursion_bound"] == cost_recursion_u(2, 2, UNIT)
    assert d["measured"]["f_evals"] == 3
