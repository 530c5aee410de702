"""Partial price operators on marketed-claim subspaces and their axiom and sandwich checks.

A price operator ``x_st`` is stored through the images of a basis of the
marketed space ``L_t``.  Pricing is F_s-homogeneous, so a claim is priced
cell by cell: on each F_s-cell it must be a combination of the basis
restricted to that cell, and its price is the same combination of the
stored images.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _lp
from ._cells import CellMarket, cell_check, reduce_market
from .bounds import BoundFamily, BoundsError
from .prob_space import FilteredSpace, RandomVariable, _values, _wrap, cond_expect

SPAN_TOL = 1e-8
AXIOM_TOL = 1e-10
POOL_SEED = 0xA5EED


class PricingError(ValueError):
    """A claim cannot be priced (outside the marketed span, or ambiguous price)."""


def _mat(vectors, n) -> np.ndarray:
    rows = [np.asarray(_values(v), dtype=float).reshape(-1) for v in vectors]
    if not rows:
        return np.zeros((0, n))
    return np.vstack(rows)


@dataclass(frozen=True, eq=False)
class ClaimSpace:
    """Marketed claims at grid index ``time_index``: span of linearly independent ``basis`` rows."""

    space: FilteredSpace
    time_index: int
    basis: np.ndarray

    def __init__(self, space: FilteredSpace, time_index: int, basis):
        B = _mat(basis, space.n_atoms)
        if not 0 <= time_index <= space.K:
            raise PricingError(f"claims: time index {time_index} is not on the grid")
        if B.shape[0] == 0 or B.shape[1] != space.n_atoms:
            raise PricingError(f"claims[{time_index}]: need a nonempty basis of {space.n_atoms}-vectors")
        for j, row in enumerate(B):
            lev = space.level_of(row)
            if lev > time_index:
                raise PricingError(f"claims[{time_index}][{j}] is not measurable at level {time_index}")
        sv = np.linalg.svd(B, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise PricingError(f"claims[{time_index}]: basis is linearly dependent")
        coef, *_ = np.linalg.lstsq(B.T, np.ones(space.n_atoms), rcond=None)
        if np.max(np.abs(B.T @ coef - 1.0)) > 1e-10:
            raise PricingError(f"claims[{time_index}]: the constant claim 1 is not in the span")
        B.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "time_index", int(time_index))
        object.__setattr__(self, "basis", B)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def element(self, coef) -> np.ndarray:
        return np.asarray(coef, float) @ self.basis


class PairOperator:
    """``x_st`` given by images of basis claims; evaluated per F_s-cell."""

    def __init__(self, space: FilteredSpace, s: int, t: int, basis: np.ndarray, images: np.ndarray):
        self.space, self.s, self.t = space, s, t
        self.basis = np.atleast_2d(np.asarray(basis, float))
        self.images = np.atleast_2d(np.asarray(images, float))
        if self.images.shape != self.basis.shape:
            raise PricingError(f"prices[{s},{t}]: expected {self.basis.shape[0]} images of "
                               f"{space.n_atoms} values")
        for j, img in enumerate(self.images):
            if space.level_of(img) > s:
                raise PricingError(f"prices[{s},{t}][{j}] is not measurable at level {s}")
        self._markets: dict[int, CellMarket] = {}

    def subcell_rep(self, c: int):
        sub = self.space.subcells(self.s, self.t, c)
        first = np.array([self.space.cell_members(self.t, j)[0] for j in sub])
        mass = self.space.cell_mass(self.t)[sub]
        return sub, first, mass / mass.sum()

    def market(self, c: int) -> CellMarket:
        if c not in self._markets:
            sub, first, pi = self.subcell_rep(c)
            price = self.images[:, self.space.cell_members(self.s, c)[0]]
            self._markets[c] = reduce_market(pi, self.basis[:, first], price)
        return self._markets[c]

    def local(self, X, c: int) -> np.ndarray:
        """Values of ``X`` on the F_t-subcells of cell ``c`` (X must be F_t-measurable)."""
        _, first, _ = self.subcell_rep(c)
        return _values(X)[first]

    def eval(self, X, strict: bool = True):
        v = _values(X)
        if v.shape != (self.space.n_atoms,):
            raise PricingError(f"claim needs {self.space.n_atoms} values")
        if self.space.level_of(v) > self.t:
            raise PricingError(f"claim is not measurable at level {self.t}, so it is not marketed "
                               f"in L_{self.t}")
        out = np.empty(self.space.n_atoms)
        for c in range(self.space.n_cells(self.s)):
            mkt = self.market(c)
            y = self.local(v, c)
            if not mkt.in_span(y, SPAN_TOL):
                raise PricingError(f"claim {v.tolist()} is outside span(L_{self.t}) on cell "
                                   f"{self.space.cell_id(self.s, c)}")
            if strict and mkt.loop_combo is not None:
                raise PricingError(f"prices for ({self.s},{self.t}) are ambiguous on cell "
                                   f"{self.space.cell_id(self.s, c)} (law of one price fails)")
            out[self.space.cell_members(self.s, c)] = mkt.price(y)
        return _wrap(self.space, out, X)

    def in_span(self, X) -> bool:
        v = _values(X)
        if self.space.level_of(v) > self.t:
            return False
        return all(self.market(c).in_span(self.local(v, c), SPAN_TOL) for c in range(self.space.n_cells(self.s)))


class PriceSystem:
    """Family of partial price operators ``x_st`` on marketed subspaces ``L_t``.

    ``claim_spaces`` maps grid index -> :class:`ClaimSpace` (or basis list);
    ``maps`` maps ``(s, t)`` -> images of the ``L_t`` basis, each of level ``<= s``.
    Missing diagonal pairs ``(t, t)`` default to the identity.
    """

    def __init__(self, space: FilteredSpace, claim_spaces: Mapping, maps: Mapping, tol: float = 1e-10):
        self.space = space
        self.claim_spaces = {}
        for t, cs in claim_spaces.items():
            cs = cs if isinstance(cs, ClaimSpace) else ClaimSpace(space, int(t), cs)
            self.claim_spaces[int(t)] = cs
        self.pairs: dict[tuple[int, int], PairOperator] = {}
        errors = []
        for (s, t), images in maps.items():
            s, t = int(s), int(t)
            if not (0 <= s <= t <= space.K):
                errors.append(f"prices[{s},{t}]: invalid grid pair")
                continue
            if t not in self.claim_spaces:
                errors.append(f"prices[{s},{t}]: no marketed claims declared at index {t}")
                continue
            try:
                self.pairs[(s, t)] = PairOperator(space, s, t, self.claim_spaces[t].basis,
                                                  _mat(images, space.n_atoms))
            except PricingError as exc:
                errors.append(str(exc))
        for t, cs in self.claim_spaces.items():
            if (t, t) not in self.pairs:
                self.pairs[(t, t)] = PairOperator(space, t, t, cs.basis, cs.basis)
        if errors:
            raise PricingError("; ".join(errors))
        # normalization; cells where the law of one price fails have no well-defined x(1)
        # and are left to the axiom and sandwich checks
        for (s, t), op in self.pairs.items():
            for c in range(space.n_cells(s)):
                mkt = op.market(c)
                if mkt.loop_combo is not None:
                    continue
                one = np.ones(mkt.n)
                if not mkt.in_span(one, 1e-10):
                    raise PricingError(f"prices[{s},{t}]: the constant claim is not marketed")
                v = mkt.price(one)
                if abs(v - 1.0) > tol:
                    raise PricingError(f"prices[{s},{t}]: normalization fails on cell "
                                       f"{space.cell_id(s, c)}, x(1) = {v!r}")

    @property
    def grid_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.pairs)

    def pair(self, s: int, t: int) -> PairOperator:
        if (s, t) not in self.pairs:
            raise PricingError(f"no price operator for pair ({s}, {t})")
        return self.pairs[(s, t)]

    def basis(self, t: int) -> np.ndarray:
        return self.claim_spaces[t].basis


def eval_price(ps: PriceSystem, s: int, t: int, X):
    """``x_st(X)`` for a marketed claim ``X``."""
    return ps.pair(s, t).eval(X)


# --------------------------------------------------------------------------- axioms

@dataclass
class AxiomVerdict:
    status: str  # "pass" | "fail" | "n/a"
    checked: int = 0
    worst: float = 0.0
    witnesses: list = field(default_factory=list)

    def record(self, gap: float, tol: float, witness: dict):
        self.checked += 1
        self.worst = max(self.worst, gap)
        if gap > tol:
            self.status = "fail"
            if len(self.witnesses) < 5:
                self.witnesses.append(witness)


@dataclass
class AxiomReport:
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(v.status != "fail" for v in self.verdicts.values())

    def summary(self) -> dict:
        return {k: v.status for k, v in self.verdicts.items()}


def _positivity_lp(mkt: CellMarket):
    """``min x(X)`` over local marketed ``X >= 0`` with ``E[X | A] = 1``: (value, X)."""
    A, b, pi = mkt.A, mkt.b, mkt.pi
    r, n = A.shape
    res = _lp.solve(b, -A.T, np.zeros(n), (A @ pi)[None, :], [1.0], [(None, None)] * r)
    if res.status != 0:
        raise _lp.LPError(f"positivity LP failed: {res.message}")
    return float(res.fun), A.T @ res.x


def check_axioms(ps: PriceSystem, seed: int = POOL_SEED, n_random: int = 200) -> AxiomReport:
    space = ps.space
    rng = np.random.default_rng(seed)
    ver = {k: AxiomVerdict("pass") for k in
           ("normalization", "additivity", "homogeneity", "monotonicity", "strict_monotonicity",
            "time_consistency", "restriction")}
    one = np.ones(space.n_atoms)
    for (s, t), op in sorted(ps.pairs.items()):
        B = op.basis
        try:
            norm_gap = float(np.max(np.abs(op.eval(one) - 1.0)))
        except PricingError as exc:
            ver["normalization"].record(np.inf, AXIOM_TOL, {"pair": [s, t], "error": str(exc)})
            ver["monotonicity"].record(np.inf, AXIOM_TOL, {"pair": [s, t], "error": str(exc)})
            continue
        ver["normalization"].record(norm_gap, AXIOM_TOL, {"pair": [s, t]})
        pool = [row for row in B] + [B[i] + B[j] for i in range(len(B)) for j in range(i + 1, len(B))]
        pool += [rng.normal(size=len(B)) @ B for _ in range(n_random)]
        prices = [op.eval(X) for X in pool]
        scale = 1.0 + max(float(np.max(np.abs(X))) for X in pool)
        # linearity
        for _ in range(20):
            i, j = rng.integers(len(pool), size=2)
            a, b = rng.normal(size=2)
            gap = float(np.max(np.abs(op.eval(a * pool[i] + b * pool[j]) - a * prices[i] - b * prices[j])))
            ver["additivity"].record(gap / scale, AXIOM_TOL, {"pair": [s, t], "X": pool[i].tolist(),
                                                             "Y": pool[j].tolist()})
            lam = rng.uniform(-2, 2, size=space.n_cells(s))[space.labels[s]]
            lx = lam * pool[i]
            if op.in_span(lx):
                gap = float(np.max(np.abs(op.eval(lx) - lam * prices[i])))
                ver["homogeneity"].record(gap / scale, AXIOM_TOL,
                                          {"pair": [s, t], "lambda": lam.tolist(), "X": pool[i].tolist()})
        # comparable pairs from the pool
        for i, Xi in enumerate(pool):
            for j, Xj in enumerate(pool):
                if i != j and np.all(Xi >= Xj - 1e-12):
                    gap = float(np.max(prices[j] - prices[i]))
                    ver["monotonicity"].record(gap, AXIOM_TOL, {"pair": [s, t], "larger": Xi.tolist(),
                                                                 "smaller": Xj.tolist()})
        # complete positivity check per cell
        for c in range(space.n_cells(s)):
            mkt = op.market(c)
            if mkt.loop_combo is not None:
                ver["monotonicity"].record(np.inf, AXIOM_TOL, {"pair": [s, t], "cell": space.cell_id(s, c),
                                                               "law_of_one_price_gap": mkt.loop_gap})
                ver["strict_monotonicity"].record(np.inf, AXIOM_TOL, {"pair": [s, t]})
                continue
            val, X = _positivity_lp(mkt)
            _, first, _ = op.subcell_rep(c)
            wit = {"pair": [s, t], "cell": space.cell_id(s, c), "X_on_subcells": X.tolist(), "price": val}
            ver["monotonicity"].record(-val, AXIOM_TOL, wit)
            ver["strict_monotonicity"].record(AXIOM_TOL - val, 0.0, wit)
    # time-consistency and restriction
    applicable = {"time_consistency": False, "restriction": False}
    for (s, t), op in sorted(ps.pairs.items()):
        for u in range(s + 1, t):
            if (s, u) not in ps.pairs or (u, t) not in ps.pairs:
                continue
            for X in op.basis:
                inner = ps.pairs[(u, t)].eval(X, strict=False)
                if not ps.pairs[(s, u)].in_span(inner):
                    continue
                applicable["time_consistency"] = True
                gap = float(np.max(np.abs(ps.pairs[(s, u)].eval(inner, strict=False) - op.eval(X, strict=False))))
                ver["time_consistency"].record(gap, 1e-9, {"s": s, "u": u, "t": t, "X": X.tolist()})
        K = space.K
        if t < K and (s, K) in ps.pairs:
            for X in op.basis:
                if ps.pairs[(s, K)].in_span(X):
                    applicable["restriction"] = True
                    gap = float(np.max(np.abs(ps.pairs[(s, K)].eval(X, strict=False) - op.eval(X, strict=False))))
                    ver["restriction"].record(gap, AXIOM_TOL, {"s": s, "t": t, "X": X.tolist()})
    for k, flag in applicable.items():
        if not flag and ver[k].status == "pass":
            ver[k].status = "n/a"
    if ver["homogeneity"].checked == 0:
        ver["homogeneity"].status = "n/a"
    return AxiomReport(ver)


# --------------------------------------------------------------------------- sandwich

@dataclass
class SandwichReport:
    holds: bool
    worst_violation: float
    witness: tuple | None
    method: str
    cells: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"holds": self.holds, "worst_violation": self.worst_violation, "method": self.method,
               "cells": self.cells}
        if self.witness is not None:
            out["witness"] = {k: _values(v).tolist() for k, v in zip("XYZ", self.witness)}
        return out


def _globalize(space, op: PairOperator, c: int, local: np.ndarray) -> np.ndarray:
    sub = space.subcells(op.s, op.t, c)
    out = np.zeros(space.n_atoms)
    for j, v in zip(sub, local):
        out[space.cell_members(op.t, j)] = v
    return out


def spot_check(ps: PriceSystem, s: int, t: int, bounds: BoundFamily, n: int = 100, seed: int = POOL_SEED):
    """Necessary condition ``m(X+) - M(X-) <= x(X) <= M(X+) - m(X-)`` on sampled marketed X.

    Returns (worst gap, witness triple or None)."""
    op = ps.pair(s, t)
    rng = np.random.default_rng(seed)
    B = op.basis
    samples = list(B) + [rng.normal(size=len(B)) @ B for _ in range(n)]
    worst, wit = 0.0, None
    for X in samples:
        p, m = np.maximum(X, 0.0), np.maximum(-X, 0.0)
        x = op.eval(X, strict=False)
        Mp, mp = bounds.eval_M(s, t, p), bounds.eval_m(s, t, p)
        Mm, mm = bounds.eval_M(s, t, m), bounds.eval_m(s, t, m)
        scale = max(1.0, float(np.max(np.abs(X))))
        up = float(np.max(x - (Mp - mm))) / scale
        lo = float(np.max((mp - Mm) - x)) / scale
        if up > worst:
            worst, wit = up, (X / scale, p / scale, m / scale)
        if lo > worst:
            worst, wit = lo, (-X / scale, m / scale, p / scale)
    return worst, wit


def check_sandwich(ps: PriceSystem, s: int, t: int, bounds: BoundFamily, majorant_only: bool = False,
                   spot_samples: int = 100, seed: int = POOL_SEED) -> SandwichReport:
    """Decide ``m_st(Z) + x_st(X) <= M_st(Y)`` for all marketed X and ``Z + X <= Y``, ``Y, Z >= 0``.

    Linear families are decided by an exact LP per cell (sup-norms of X, Y, Z
    capped at 1).  Good-deal families are decided by the existence of an
    admissible pricing kernel on each cell, with a sampled necessary-condition
    check on top.  Families without a cell description fall back to the
    sampled check alone.
    """
    space = ps.space
    op = ps.pair(s, t)
    cells, worst, witness = [], 0.0, None
    if bounds.supports_core(s, t):
        for c in range(space.n_cells(s)):
            core = bounds.core(s, t, c)
            try:
                w = cell_check(core, op.market(c), majorant_only)
            except _lp.LPError as exc:
                raise _lp.LPError(f"cell {space.cell_id(s, c)}: {exc}") from None
            entry = {"cell": space.cell_id(s, c), "holds": w is None}
            if w is not None:
                entry.update(violation=w.violation, method=w.method)
                if w.violation > worst or witness is None:
                    worst = max(worst, w.violation)
                    witness = tuple(space.rv(_globalize(space, op, c, v)) for v in (w.X, w.Y, w.Z))
            cells.append(entry)
        method = "lp" if bounds.variant in ("density", "measure_families") else "cutting-plane+spot-check"
    else:
        method = "spot-check"
    if bounds.variant not in ("density", "measure_families") and not majorant_only:
        gap, wit = spot_check(ps, s, t, bounds, spot_samples, seed)
        if gap > 1e-8 and gap > worst:
            worst = gap
            witness = tuple(space.rv(v) for v in wit)
    holds = witness is None
    return SandwichReport(holds, float(worst) if not holds else 0.0, witness, method, cells)
