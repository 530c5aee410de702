import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixtures import two_period_space
from sandwich_pricing.prob_space import (FilteredSpace, RandomVariable, SpaceError, cond_expect, cond_moment2,
                                         cond_variance, pointwise_extrema)


def test_cond_expect_by_hand():
    sp = two_period_space()
    X = np.array([1.0, 2.0, 3.0, 4.0])
    # cell {uu, ud}: (0.3*1 + 0.2*2)/0.5 = 1.4; cell {du, dd}: (0.1*3 + 0.4*4)/0.5 = 3.8
    assert np.allclose(cond_expect(sp, X, 1), [1.4, 1.4, 3.8, 3.8], atol=1e-15)
    assert np.allclose(cond_expect(sp, X, 0), 0.3 + 0.4 + 0.3 + 1.6)
    assert np.array_equal(cond_expect(sp, X, 2), X)


def test_cell_bookkeeping():
    sp = two_period_space()
    assert sp.K == 2 and sp.n_cells(1) == 2
    assert sp.cell_id(1, 1) == "du+dd"
    assert sp.subcells(0, 2, 0) == [0, 1, 2, 3]
    assert np.allclose(sp.cell_mass(1), [0.5, 0.5])
    assert sp.level_of([5, 5, 5, 5]) == 0
    assert sp.level_of([1, 1, 2, 2]) == 1
    assert sp.level_of([1, 2, 2, 2]) == 2


def test_validation_errors_are_aggregated():
    with pytest.raises(SpaceError) as exc:
        FilteredSpace(["a", "b", "c"], [0.5, 0.6, -0.1], [0, 1], [[["a", "b"], ["c"]], [["a"], ["b", "c"]]])
    msg = str(exc.value)
    assert "space.probs" in msg
    assert "space.partitions[1]" in msg
    assert "discrete" in msg


def test_random_variable_level_is_checked():
    sp = two_period_space()
    assert RandomVariable(sp, [1, 1, 2, 2]).level == 1
    with pytest.raises(SpaceError, match="not measurable at level 0"):
        RandomVariable(sp, [1, 1, 2, 2], level=0)
    rv = sp.rv([1, 2, 3, 4])
    out = cond_expect(sp, rv, 1)
    assert isinstance(out, RandomVariable) and out.level == 1


def test_pointwise_extrema():
    assert np.array_equal(pointwise_extrema([[1, 5], [3, 2]], "max"), [3, 5])
    assert np.array_equal(pointwise_extrema([[1, 5], [3, 2]], "min"), [1, 2])
    with pytest.raises(ValueError):
        pointwise_extrema([])


probs = st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4).map(lambda p: np.array(p) / sum(p))
vecs = st.lists(st.floats(-10, 10), min_size=4, max_size=4).map(np.array)


def _space(p):
    atoms = ["a", "b", "c", "d"]
    p = p / p.sum()
    return FilteredSpace(atoms, p, [0, 1, 2], [[atoms], [["a", "b"], ["c", "d"]], [[x] for x in atoms]])


@settings(max_examples=60, deadline=None)
@given(probs, vecs, vecs)
def test_calculus_properties(p, X, Y):
    sp = _space(p)
    assert np.allclose(cond_expect(sp, cond_expect(sp, X, 1), 0), cond_expect(sp, X, 0), atol=1e-10)
    Z = np.array([X[0], X[0], Y[3], Y[3]])
    assert np.allclose(cond_expect(sp, Z * Y, 1), Z * cond_expect(sp, Y, 1), atol=1e-8)
    var = cond_variance(sp, X, 1)
    assert var.min() >= 0
    assert np.allclose(var, cond_moment2(sp, X, 1) - cond_expect(sp, X, 1) ** 2, atol=1e-8)
    assert cond_expect(sp, np.abs(X), 1).min() >= 0
