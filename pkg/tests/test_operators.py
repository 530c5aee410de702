import numpy as np
import pytest

from fixtures import binomial_prices, binomial_space, cash_only, two_period_space
from sandwich_pricing.bounds import DensityBounds, GoodDeal
from sandwich_pricing.operators import (ClaimSpace, PriceSystem, PricingError, check_axioms, check_sandwich,
                                        eval_price)


def test_eval_price_binomial():
    ps = binomial_prices()
    assert float(eval_price(ps, 0, 1, [2.0, 0.5])[0]) == pytest.approx(1.0)
    # (1, 0) = (2/3, -2/3) combination: price 2/3 * 1/2 ... solved through the kernel (1/3, 2/3)
    assert float(eval_price(ps, 0, 1, [1.0, 0.0])[0]) == pytest.approx(1 / 3)
    assert np.allclose(eval_price(ps, 1, 1, [3.0, 4.0]), [3.0, 4.0])


def test_claim_space_errors():
    sp = binomial_space()
    with pytest.raises(PricingError, match="linearly dependent"):
        ClaimSpace(sp, 1, [[1, 1], [2, 2]])
    with pytest.raises(PricingError, match="constant claim"):
        ClaimSpace(sp, 1, [[1, 0]])
    with pytest.raises(PricingError, match="not measurable"):
        ClaimSpace(sp, 0, [[1, 1], [1, 0]])


def test_unmarketed_claim_rejected():
    ps = cash_only()
    with pytest.raises(PricingError, match="outside span"):
        eval_price(ps, 0, 1, [1.0, 0.0])


def test_normalization_checked():
    sp = binomial_space()
    with pytest.raises(PricingError, match="normalization"):
        PriceSystem(sp, {1: [[1, 1]]}, {(0, 1): [[0.9, 0.9]]})


def test_axioms_pass_and_fail():
    assert check_axioms(binomial_prices(), n_random=40).passed
    sp = binomial_space()
    bad = PriceSystem(sp, {1: [[1, 1], [1, 0]]}, {(0, 1): [[1, 1], [-0.1, -0.1]]})
    rep = check_axioms(bad, n_random=40)
    assert not rep.passed
    assert rep.verdicts["monotonicity"].status == "fail"


def test_time_consistency_axiom():
    sp = two_period_space()
    claims = {1: [[1, 1, 1, 1], [1, 1, 0, 0]], 2: [[1, 1, 1, 1], [1, 0, 1, 0]]}
    # kernel: q1 = (0.5, 0.5) on F_1 cells; q2 = 0.5 on each subcell
    maps = {(0, 1): [[1] * 4, [0.5] * 4], (1, 2): [[1] * 4, [0.5] * 4], (0, 2): [[1] * 4, [0.5] * 4]}
    assert check_axioms(PriceSystem(sp, claims, maps), n_random=20).verdicts["time_consistency"].status == "pass"
    maps[(0, 2)] = [[1] * 4, [0.6] * 4]
    assert check_axioms(PriceSystem(sp, claims, maps), n_random=20).verdicts["time_consistency"].status == "fail"


def test_sandwich_linear_family_exact():
    ps = binomial_prices()
    # admissible kernel (1/3, 2/3) means f = (2/3, 4/3)
    assert check_sandwich(ps, 0, 1, DensityBounds.from_terminal(ps.space, [0.6, 1.2], [0.8, 1.4])).holds
    rep = check_sandwich(ps, 0, 1, DensityBounds.from_terminal(ps.space, [0.7, 0.7], [1.3, 1.3]))
    assert not rep.holds and rep.method == "lp"
    X, Y, Z = (np.asarray(v) for v in rep.witness)
    assert np.all(Z + X <= Y + 1e-12) and Y.min() >= -1e-12 and Z.min() >= -1e-12
    b = DensityBounds.from_terminal(ps.space, [0.7, 0.7], [1.3, 1.3])
    lhs = b.eval_m(0, 1, Z)[0] + eval_price(ps, 0, 1, X)[0] - b.eval_M(0, 1, Y)[0]
    assert lhs == pytest.approx(rep.worst_violation, abs=1e-9)


def test_sandwich_good_deal_threshold():
    ps = binomial_prices()
    assert check_sandwich(ps, 0, 1, GoodDeal.from_horizon_delta(ps.space, 1 / 3 + 1e-6)).holds
    rep = check_sandwich(ps, 0, 1, GoodDeal.from_horizon_delta(ps.space, 0.2))
    assert not rep.holds and rep.worst_violation > 0
