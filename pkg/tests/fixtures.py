"""Small hand-checked markets shared by the tests."""
from sandwich_pricing.operators import PriceSystem
from sandwich_pricing.prob_space import FilteredSpace


def binomial_space():
    return FilteredSpace(["up", "down"], [0.5, 0.5], [0, 1], [[["up", "down"]], [["up"], ["down"]]])


def binomial_prices(space=None):
    """Claims 1 and (2, 0.5), both priced 1: the kernel is forced to (2/3, 4/3)."""
    space = space or binomial_space()
    return PriceSystem(space, {1: [[1, 1], [2, 0.5]]}, {(0, 1): [[1, 1], [1, 1]]})


def cash_only(space=None):
    """Only the constant claim is marketed: every kernel is admissible a priori."""
    space = space or binomial_space()
    return PriceSystem(space, {1: [[1.0] * space.n_atoms]}, {(0, 1): [[1.0] * space.n_atoms]})


def two_period_space():
    atoms = ["uu", "ud", "du", "dd"]
    return FilteredSpace(atoms, [0.3, 0.2, 0.1, 0.4], [0, 1, 2],
                         [[atoms], [["uu", "ud"], ["du", "dd"]], [[a] for a in atoms]])
