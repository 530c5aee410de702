"""Sandwich-preserving extension of partial price operators and density recovery.

The extension adds one claim at a time.  For a new claim ``Y0`` the
admissible prices on an F_s-cell form an interval ``[c, d]``: the extremes
of ``q . Y0`` over conditional pricing kernels ``q`` that reproduce the
current prices and respect the bounds.  By LP duality these are the
sub- and super-replication values built from ``m``, ``x`` and ``M``.  The
value ``y0 = (1 - lam) c + lam d`` is then fixed and the claim joins the
marketed space.  Repeating this over the indicators of the F_t-cells
yields an operator on every F_t-measurable claim.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._cells import BallSolver, SandwichViolation, _wdict, cell_check, cell_range
from .bounds import BallCore, BoundFamily, Density
from .operators import PairOperator, PriceSystem, PricingError
from .prob_space import FilteredSpace, _values, cond_expect

__all__ = ["SandwichViolation", "ExtensionStep", "ExtensionResult", "one_step_extend", "full_extend",
           "recover_density", "MonotonicityError"]


class MonotonicityError(ValueError):
    """An operator assigns a negative price to a nonnegative claim."""


@dataclass
class ExtensionStep:
    s: int
    t: int
    cell: str
    claim: str
    c: float
    d: float
    y0: float

    @property
    def width(self) -> float:
        return self.d - self.c

    def to_dict(self) -> dict:
        return {"s": self.s, "t": self.t, "cell": self.cell, "claim": self.claim,
                "c": self.c, "d": self.d, "y0": self.y0}


@dataclass
class ExtensionResult:
    space: FilteredSpace
    s: int
    t: int
    extended: PairOperator
    steps: list
    lam: float
    checks: dict = field(default_factory=dict)

    @property
    def zero_width_steps(self) -> list:
        return [st for st in self.steps if st.width <= 1e-12]

    def eval(self, X):
        return self.extended.eval(X)

    def indicator_prices(self) -> np.ndarray:
        """``x(1_C)`` for every F_t-cell ``C`` (value on the F_s-cell containing C)."""
        return np.array([self.extended.eval(self.space.indicator(self.t, j))[self.space.cell_members(self.t, j)[0]]
                         for j in range(self.space.n_cells(self.t))])


def _pair_operator(op):
    if isinstance(op, PairOperator):
        return op
    raise TypeError("expected a PairOperator (use PriceSystem.pair(s, t))")


def _select(lo, hi, qlo, qhi, lam):
    y0 = (1.0 - lam) * lo + lam * hi
    return y0, (1.0 - lam) * qlo + lam * qhi


def _cell_interval(space, op: PairOperator, bounds: BoundFamily, c: int, y: np.ndarray, lam: float,
                   majorant_only: bool, solver_state: dict | None = None):
    s, t = op.s, op.t
    mkt = op.market(c)
    core = bounds.core(s, t, c)
    solver = None
    if isinstance(core, BallCore):
        st = solver_state or {}
        solver = BallSolver(core, mkt, hint=st.get("q"), cuts=st.get("cuts"))
    try:
        lo, hi, qlo, qhi = cell_range(core, mkt, y, majorant_only, solver=solver)
    except SandwichViolation as exc:
        exc.cell = space.cell_id(s, c)
        exc.pair = (s, t)
        raise
    if lo > hi + 1e-8:
        raise SandwichViolation(f"empty admissible interval [{lo}, {hi}]", cell=space.cell_id(s, c), pair=(s, t))
    hi = max(hi, lo)
    y0, q = _select(lo, hi, qlo, qhi, lam)
    if solver_state is not None and solver is not None:
        solver_state["q"] = q
        solver_state["cuts"] = (solver.G, solver.h)
    return lo, hi, y0


def one_step_extend(space: FilteredSpace, s: int, t: int, x, bounds: BoundFamily, Y0, lam: float = 0.5,
                    majorant_only: bool = False):
    """Extend ``x`` (a :class:`PairOperator` for ``(s, t)``) to ``L + span{Y0}``.

    Returns ``(c, d, y0, extended)`` with ``c, d, y0`` as level-s arrays.
    Raises :class:`SandwichViolation` when the interval is empty on some cell.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    op = _pair_operator(x)
    v = _values(Y0)
    if space.level_of(v) > t:
        raise PricingError(f"Y0 is not measurable at level {t}")
    if op.in_span(v):
        raise PricingError("Y0 is already marketed")
    cs, ds, ys = (np.empty(space.n_atoms) for _ in range(3))
    for c in range(space.n_cells(s)):
        mkt = op.market(c)
        y = op.local(v, c)
        idx = space.cell_members(s, c)
        if mkt.in_span(y) and mkt.loop_combo is None:
            p = mkt.price(y)
            cs[idx] = ds[idx] = ys[idx] = p
            continue
        lo, hi, y0 = _cell_interval(space, op, bounds, c, y, lam, majorant_only)
        cs[idx], ds[idx], ys[idx] = lo, hi, y0
    new = PairOperator(space, s, t, np.vstack([op.basis, v]), np.vstack([op.images, ys]))
    return cs, ds, ys, new


def full_extend(space: FilteredSpace, s: int, t: int, x, bounds: BoundFamily, lam: float = 0.5,
                majorant_only: bool = False, verify: bool = True) -> ExtensionResult:
    """Extend ``x`` to every F_t-measurable claim by adding F_t-cell indicators in order."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    op = _pair_operator(x)
    n_t = space.n_cells(t)
    prices = np.empty((n_t, space.n_atoms))
    steps = []
    for c in range(space.n_cells(s)):
        idx = space.cell_members(s, c)
        sub = space.subcells(s, t, c)
        mkt = op.market(c)
        state: dict = {}
        # work on a local copy of the market: basis rows over the subcells
        for k, j in enumerate(sub):
            y = np.zeros(len(sub))
            y[k] = 1.0
            if mkt.in_span(y) and mkt.loop_combo is None:
                continue
            local = _LocalOp(space, s, t, c, mkt)
            lo, hi, y0 = _cell_interval(space, local, bounds, c, y, lam, majorant_only, state)
            steps.append(ExtensionStep(s, t, space.cell_id(s, c), space.cell_id(t, j), lo, hi, y0))
            mkt = mkt.with_claim(y, y0)
        if mkt is op.market(c):
            # nothing was added: the marketed prices alone must admit a kernel
            w = cell_check(bounds.core(s, t, c), mkt, majorant_only)
            if w is not None:
                raise SandwichViolation(f"sandwich condition fails ({w.method})", cell=space.cell_id(s, c),
                                        witness=_wdict(w), certificate=w.certificate or None, pair=(s, t))
        q = mkt.A.T @ mkt.b  # unique kernel once the local market is complete
        for k, j in enumerate(sub):
            prices[j] = 0.0
            prices[j, idx] = q[k]
    basis = np.array([space.indicator(t, j) for j in range(n_t)])
    images = np.zeros((n_t, space.n_atoms))
    for j in range(n_t):
        parent = space.labels[s, space.cell_members(t, j)[0]]
        images[j, space.cell_members(s, parent)] = prices[j, space.cell_members(s, parent)[0]]
    ext = PairOperator(space, s, t, basis, images)
    res = ExtensionResult(space, s, t, ext, steps, lam)
    if verify:
        res.checks = _verify(space, op, ext, bounds, s, t, majorant_only)
    return res


class _LocalOp:
    """Adapter exposing one already-reduced local market through the PairOperator interface."""

    def __init__(self, space, s, t, c, mkt):
        self.space, self.s, self.t, self._c, self._mkt = space, s, t, c, mkt

    def market(self, c):
        return self._mkt


def _verify(space, op, ext, bounds, s, t, majorant_only) -> dict:
    agree = 0.0
    for X in op.basis:
        agree = max(agree, float(np.max(np.abs(ext.eval(X) - op.eval(X, strict=False)))))
    mono = float(np.min(ext.images)) if ext.images.size else 0.0
    gap = 0.0
    for j in range(space.n_cells(t)):
        e = space.indicator(t, j)
        xe = ext.eval(e)
        gap = max(gap, float(np.max(xe - bounds.eval_M(s, t, e))))
        if not majorant_only:
            gap = max(gap, float(np.max(bounds.eval_m(s, t, e) - xe)))
    return {"agreement": agree, "min_indicator_price": mono, "bound_gap": gap}


def recover_density(space: FilteredSpace, s: int, t: int, x) -> Density:
    """Density ``f`` with ``E[f | F_s] = 1`` and ``x(X) = E[f X | F_s]`` for F_t-measurable X.

    ``x`` may be an :class:`ExtensionResult` or a complete :class:`PairOperator`.
    """
    op = x.extended if isinstance(x, ExtensionResult) else _pair_operator(x)
    mass_s = space.cell_mass(s)
    mass_t = space.cell_mass(t)
    f = np.empty(space.n_atoms)
    for j in range(space.n_cells(t)):
        e = space.indicator(t, j)
        members = space.cell_members(t, j)
        price = float(op.eval(e)[members[0]])
        if price < -1e-10:
            raise MonotonicityError(f"negative price {price} for indicator of cell {space.cell_id(t, j)}")
        parent = space.labels[s, members[0]]
        f[members] = max(price, 0.0) * mass_s[parent] / mass_t[j]
    dev = float(np.max(np.abs(cond_expect(space, f, s) - 1.0)))
    if dev > 1e-9:
        raise MonotonicityError(f"recovered density is not normalized (|E[f|F_s] - 1| = {dev:.3e})")
    # renormalize away rounding so the density passes the strict normalization check
    f = f / cond_expect(space, f, s)
    return Density(space, f)
