import numpy as np
import pytest

from fixtures import binomial_prices, cash_only
from sandwich_pricing.bounds import DensityBounds, GoodDeal
from sandwich_pricing.extension import (SandwichViolation, full_extend, one_step_extend, recover_density)


def _bands(ps):
    return DensityBounds.from_terminal(ps.space, [0.8, 0.8], [1.2, 1.2])


@pytest.mark.parametrize("lam,expected", [(0.0, 0.4), (0.5, 0.5), (1.0, 0.6)])
def test_interval_and_selection(lam, expected):
    # price of 1_up is squeezed between 0.5 * 0.8 and 0.5 * 1.2
    ps = cash_only()
    res = full_extend(ps.space, 0, 1, ps.pair(0, 1), _bands(ps), lam)
    (step,) = res.steps
    assert (step.c, step.d) == pytest.approx((0.4, 0.6), abs=1e-12)
    assert step.y0 == pytest.approx(expected, abs=1e-12)
    assert res.indicator_prices()[0] == pytest.approx(expected, abs=1e-12)
    f = recover_density(ps.space, 0, 1, res).f
    assert np.allclose(f, [2 * expected, 2 - 2 * expected])


def test_one_step_extend():
    ps = cash_only()
    cs, ds, ys, op = one_step_extend(ps.space, 0, 1, ps.pair(0, 1), _bands(ps), [1.0, 0.0])
    assert float(cs[0]) == pytest.approx(0.4) and float(ds[0]) == pytest.approx(0.6)
    assert float(op.eval([0.0, 1.0])[0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        one_step_extend(ps.space, 0, 1, ps.pair(0, 1), _bands(ps), [2.0, 2.0])


def test_complete_market_is_still_checked():
    ps = binomial_prices()
    res = full_extend(ps.space, 0, 1, ps.pair(0, 1), GoodDeal.from_horizon_delta(ps.space, 0.5))
    assert not res.steps
    assert np.allclose(recover_density(ps.space, 0, 1, res).f, [2 / 3, 4 / 3])
    with pytest.raises(SandwichViolation) as exc:
        full_extend(ps.space, 0, 1, ps.pair(0, 1), GoodDeal.from_horizon_delta(ps.space, 0.2))
    assert exc.value.witness is not None and exc.value.pair == (0, 1)


def test_lambda_range():
    ps = cash_only()
    with pytest.raises(ValueError):
        full_extend(ps.space, 0, 1, ps.pair(0, 1), _bands(ps), 1.5)
