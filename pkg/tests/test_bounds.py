import cvxpy as cp
import numpy as np
import pytest

from fixtures import binomial_space, two_period_space
from sandwich_pricing.bounds import (BoundsError, ComposedGoodDeal, Density, DensityBounds, GoodDeal,
                                     MeasureFamilies, check_m_stability, delta_table, goodd_exact,
                                     is_dynamic_ngd_measure, waterfill)


@pytest.mark.parametrize("seed", range(15))
def test_waterfill_matches_convex_solver(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    pi = rng.dirichlet(np.ones(n))
    x = rng.normal(size=n)
    delta = float(rng.uniform(0.05, 3.0))
    val, q = waterfill(pi, x, delta)
    v = cp.Variable(n)
    prob = cp.Problem(cp.Maximize(x @ v), [v >= 0, cp.sum(v) == 1,
                                           cp.sum(cp.multiply(1 / pi, cp.square(v - pi))) <= delta ** 2])
    prob.solve()
    assert val == pytest.approx(prob.value, abs=1e-6)
    assert q.min() >= 0 and q.sum() == pytest.approx(1.0)
    assert np.sum((q - pi) ** 2 / pi) <= delta ** 2 * (1 + 1e-9)


def test_good_deal_binomial_bounds():
    # f = 1 +- 0.5 stays positive, so both bounds are E[X] +- 0.5 sd(X) = 1.25 +- 0.375
    sp = binomial_space()
    gd = GoodDeal.from_horizon_delta(sp, 0.5)
    X = np.array([2.0, 0.5])
    assert float(gd.eval_M(0, 1, X)[0]) == pytest.approx(1.625, abs=1e-12)
    assert float(gd.eval_m(0, 1, X)[0]) == pytest.approx(0.875, abs=1e-12)
    # with a large budget positivity binds: the sup puts all mass on the up state
    assert float(goodd_exact(sp, 0, 1, X, 5.0)[0]) == pytest.approx(2.0, abs=1e-12)


def test_delta_table():
    tab = delta_table(2.0, [0, 1, 3])
    assert tab[0, 1] == 1.0 and tab[0, 2] == 7.0 and tab[1, 2] == 3.0
    assert np.isnan(tab[2, 0])
    with pytest.raises(BoundsError, match="delta must exceed 1"):
        delta_table(1.0, [0, 1])


def test_composed_table_multiplies_one_plus_delta():
    sp = two_period_space()
    fam = ComposedGoodDeal(sp, [0.2, 0.5])
    assert fam.delta_table()[0, 2] == pytest.approx(1.2 * 1.5 - 1)
    assert fam.supports_core(0, 1) and not fam.supports_core(0, 2)


def test_density_bounds_by_hand():
    sp = binomial_space()
    db = DensityBounds.from_terminal(sp, [0.8, 0.8], [1.2, 1.2])
    up = np.array([1.0, 0.0])
    assert float(db.eval_M(0, 1, up)[0]) == pytest.approx(0.6)
    assert float(db.eval_m(0, 1, up)[0]) == pytest.approx(0.4)


def test_measure_families_take_extremes():
    sp = binomial_space()
    mf = MeasureFamilies(sp, [[1.5, 0.5], [0.5, 1.5]])
    X = np.array([1.0, 0.0])
    assert float(mf.eval_M(0, 1, X)[0]) == pytest.approx(0.75)
    assert float(mf.eval_m(0, 1, X)[0]) == pytest.approx(0.25)


def test_negative_claims_rejected():
    gd = GoodDeal(binomial_space(), 1.5)
    with pytest.raises(BoundsError):
        gd.eval_M(0, 1, np.array([1.0, -1.0]))


def test_density_validation():
    sp = binomial_space()
    with pytest.raises(BoundsError):
        Density(sp, [1.5, 1.0])
    with pytest.raises(BoundsError):
        Density(sp, [2.5, -0.5])


def test_pasting_closure():
    sp = two_period_space()
    # rectangular: the first-step kernel and the second-step kernel on each F_1-cell vary independently
    first = [np.array([1.2, 1.2, 0.8, 0.8]), np.array([0.8, 0.8, 1.2, 1.2])]
    on_u = [np.array([1.0, 1.0]), np.array([0.5, 1.75])]
    on_d = [np.array([1.0, 1.0]), np.array([2.0, 0.75])]
    rect = [a * np.concatenate([u, d]) for a in first for u in on_u for d in on_d]
    assert check_m_stability(sp, rect).stable
    assert not check_m_stability(sp, [rect[0], rect[-1]]).stable


def test_ngd_check_on_binomial_measure():
    sp = binomial_space()
    table = GoodDeal.from_horizon_delta(sp, 0.5).table
    rep = is_dynamic_ngd_measure([2 / 3, 4 / 3], table, sp)
    # E[(f - 1)^2] = 1/9 against a budget of 1/4
    assert rep.passes and rep.static_excess == pytest.approx(1 / 9 - 1 / 4)
    assert not is_dynamic_ngd_measure([0.2, 1.8], table, sp).passes
