import numpy as np
import pytest

from sandwich_pricing.generators import random_instance


def test_seeded_instances_repeat():
    a, b = random_instance(11, "density"), random_instance(11, "density")
    assert np.array_equal(a.hidden, b.hidden)
    assert a.space.n_atoms == b.space.n_atoms


@pytest.mark.parametrize("family", ["density", "measure_families", "good_deal", "composed_good_deal"])
def test_instance_shape(family):
    for seed in range(5):
        inst = random_instance(seed, family)
        assert 2 <= inst.space.n_atoms <= 16 and 1 <= inst.space.K <= 4
        assert inst.feasible and inst.perturbed_pair is None
        assert inst.hidden.min() > 0


def test_infeasible_instances_mark_the_pair():
    inst = random_instance(3, "good_deal", infeasible=True)
    s, t = inst.perturbed_pair
    assert not inst.feasible and t == inst.space.K and s < t


def test_unknown_family():
    with pytest.raises(ValueError):
        random_instance(0, "nope")
