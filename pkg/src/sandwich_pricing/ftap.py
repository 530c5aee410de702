"""Equivalent pricing measures on a trading grid.

:func:`build_measure` follows the constructive route: one-step extensions
yield one-step densities ``f_k`` (conditional mean one at ``k-1``) whose
product is the density of the pricing measure.  :func:`lp_feasibility` is
an independent oracle that searches for the density directly, with every
pricing and bound constraint written on atoms.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _lp
from .bounds import (BoundFamily, ComposedGoodDeal, Density, DensityBounds, GoodDeal, MeasureFamilies,
                     is_dynamic_ngd_measure)
from .extension import SandwichViolation, full_extend, recover_density
from .operators import PairOperator, PriceSystem
from .prob_space import FilteredSpace, cond_expect

EPS_POS = 1e-9
LAMBDA_RETRIES = (0.5, 0.25, 0.75, 0.1, 0.9)
MAX_ITER = 10_000


class NumericalError(RuntimeError):
    """Iteration caps exceeded or solver breakdown."""


class BoundContainmentWarning(UserWarning):
    """A built measure leaves the bounds at a non-adjacent grid pair."""


@dataclass
class PricingMeasure:
    f: Density
    per_step: list
    space: FilteredSpace
    lam: float = 0.5
    equivalent: bool = True
    warnings: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def expect(self, X, s: int) -> np.ndarray:
        return self.f.expect(X, s)

    def to_dict(self) -> dict:
        return {"f": self.f.f.tolist(), "per_step": [g.tolist() for g in self.per_step], "lambda": self.lam,
                "equivalent": self.equivalent, "warnings": self.warnings, "notes": self.notes}


@dataclass
class FeasibilityCertificate:
    status: str  # "feasible" | "infeasible"
    measure: Density | None = None
    farkas: dict | None = None
    iterations: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self) -> dict:
        out = {"status": self.status, "iterations": self.iterations}
        if self.measure is not None:
            out["f"] = self.measure.f.tolist()
        if self.farkas is not None:
            out["farkas"] = self.farkas
        return out


# --------------------------------------------------------------------------- constructive path

def _step_operator(ps: PriceSystem, k: int, later: np.ndarray) -> PairOperator:
    """One-step market for ``(k-1, k)``: every priced claim seen from ``k``.

    ``later`` is the product of the already built factors for steps after
    ``k``; a claim paying ``X`` at ``t > k`` is worth ``E[later_t X | F_k]``
    at ``k`` under those factors."""
    space = ps.space
    claims, images = [np.ones(space.n_atoms)], [np.ones(space.n_atoms)]
    for (s, t), op in sorted(ps.pairs.items()):
        if s != k - 1 or t < k:
            continue
        partial = later[t]
        for X, img in zip(op.basis, op.images):
            claims.append(X if t == k else cond_expect(space, partial * X, k))
            images.append(img)
    return PairOperator(space, k - 1, k, np.array(claims), np.array(images))


def _build(ps: PriceSystem, bounds: BoundFamily, lam: float, majorant_only: bool):
    space = ps.space
    K = space.K
    steps: list[np.ndarray] = [None] * (K + 1)
    # later[t] = prod_{j=k+1}^{t} f_j, maintained while walking backward
    for k in range(K, 0, -1):
        later = {t: np.prod([steps[j] for j in range(k + 1, t + 1)], axis=0) if t > k else np.ones(space.n_atoms)
                 for t in range(k, K + 1)}
        op = _step_operator(ps, k, later)
        try:
            ext = full_extend(space, k - 1, k, op, bounds, lam, majorant_only)
        except SandwichViolation as exc:
            exc.pair = (k - 1, k)
            raise
        steps[k] = recover_density(space, k - 1, k, ext).f
    per_step = steps[1:]
    f = np.prod(per_step, axis=0) if per_step else np.ones(space.n_atoms)
    return f, per_step


def positivity_hypothesis(space: FilteredSpace, bounds: BoundFamily) -> bool:
    """``m_0T(1_w) > 0`` for every atom."""
    K = space.K
    if not bounds.supports_core(0, K) and not isinstance(bounds, ComposedGoodDeal):
        return False
    return all(float(np.min(bounds.eval_m(0, K, space.indicator(K, j)))) > 0 for j in range(space.n_cells(K)))


def build_measure(ps: PriceSystem, bounds: BoundFamily, lam: float = 0.5, eps_pos: float = EPS_POS,
                  majorant_only: bool = False, n_random: int = 100, seed: int = 0) -> PricingMeasure:
    """Product of one-step densities obtained from sandwich extensions, built backward in time."""
    space = ps.space
    tried = [lam] + [l for l in LAMBDA_RETRIES if l != lam]
    f = per_step = None
    used = lam
    for attempt in tried:
        f, per_step = _build(ps, bounds, attempt, majorant_only)
        used = attempt
        if f.min() > eps_pos:
            break
    else:
        f, per_step = _build(ps, bounds, lam, majorant_only)
        used = lam
    pm = PricingMeasure(Density(space, f, tol=1e-9), per_step, space, used, bool(f.min() > eps_pos))
    if not pm.equivalent:
        pm.notes.append("absolutely continuous only: no lambda in the retry list gave a strictly positive density")
    elif used != lam:
        pm.notes.append(f"strict positivity needed lambda = {used}")
        if positivity_hypothesis(space, bounds):
            pm.notes.append("positivity hypothesis holds yet only a lambda retry gave min f > 0")
    rep = verify_representation(ps, pm, bounds, n_random=n_random, seed=seed)
    for (s, t), gap in rep["containment"].items():
        if gap > 1e-8:
            msg = f"bounds violated at pair ({s}, {t}) by {gap:.3e}"
            pm.warnings.append(msg)
            warnings.warn(msg, BoundContainmentWarning, stacklevel=2)
    if rep["max_residual"] > 1e-9:
        pm.warnings.append(f"representation residual {rep['max_residual']:.3e}")
    return pm


def verify_representation(ps: PriceSystem, pm, bounds: BoundFamily | None = None, n_random: int = 100,
                          seed: int = 0) -> dict:
    """Residuals of ``x_st(X) = E[f X | F_s] / E[f | F_s]`` over all pairs and basis claims,
    time-consistency of the induced operators, and bound containment."""
    space = ps.space
    dens = pm.f if isinstance(pm, PricingMeasure) else pm
    f = dens.f if isinstance(dens, Density) else np.asarray(dens, float)
    proc = [cond_expect(space, f, k) for k in range(space.K + 1)]

    def xhat(X, s):
        return cond_expect(space, f * X, s) / np.where(proc[s] > 0, proc[s], np.nan)

    residuals = {}
    for (s, t), op in sorted(ps.pairs.items()):
        r = 0.0
        for X, img in zip(op.basis, op.images):
            r = max(r, float(np.nanmax(np.abs(xhat(X, s) - img))))
        residuals[(s, t)] = r
    tc = 0.0
    K = space.K
    atoms = np.eye(space.n_atoms)
    for r_ in range(K + 1):
        for s in range(r_, K + 1):
            for t in range(s, K + 1):
                direct = xhat(atoms, r_)
                nested = xhat(xhat(xhat(atoms, t), s), r_)
                tc = max(tc, float(np.nanmax(np.abs(direct - nested))))
    containment = {}
    if bounds is not None:
        rng = np.random.default_rng(seed)
        for s in range(K + 1):
            for t in range(s + 1, K + 1):
                tests = [space.indicator(t, j) for j in range(space.n_cells(t))]
                tests += [rng.exponential(size=space.n_cells(t))[space.labels[t]] for _ in range(n_random)]
                gap = 0.0
                for X in tests:
                    v = xhat(X, s)
                    gap = max(gap, float(np.max(v - bounds.eval_M(s, t, X))), float(np.max(bounds.eval_m(s, t, X) - v)))
                containment[(s, t)] = gap
    return {"residuals": residuals, "max_residual": max(residuals.values(), default=0.0),
            "time_consistency": tc, "containment": containment,
            "max_containment_gap": max(containment.values(), default=0.0)}


# --------------------------------------------------------------------------- LP oracle

def _bound_pairs(space, bounds):
    K = space.K
    if isinstance(bounds, ComposedGoodDeal):
        return [(k - 1, k) for k in range(1, K + 1)]
    return [(s, t) for s in range(K + 1) for t in range(s + 1, K + 1)]


def _cell_rows(space, k, c):
    """Row vector ``w`` with ``w . f = P(C) f_k(C) = E[f 1_C]``."""
    row = np.zeros(space.n_atoms)
    members = space.cell_members(k, c)
    row[members] = space.probs[members]
    return row


def oracle_system(ps: PriceSystem, bounds: BoundFamily, eps_pos: float = EPS_POS):
    """Linear part of the feasibility system: ``(n_vars, A_ub, b_ub, A_eq, b_eq, bounds)``.

    Variables are the atom densities, followed by convex weights for measure families."""
    space = ps.space
    n = space.n_atoms
    eq, ub = [], []
    for c in range(space.n_cells(0)):
        row = _cell_rows(space, 0, c)
        eq.append((row, row.sum()))
    for (s, t), op in sorted(ps.pairs.items()):
        if s == t:
            continue
        for X, img in zip(op.basis, op.images):
            for c in range(space.n_cells(s)):
                members = space.cell_members(s, c)
                row = np.zeros(n)
                row[members] = space.probs[members] * (X[members] - img[members[0]])
                eq.append((row, 0.0))
    extra = 0
    mf_blocks = []
    if isinstance(bounds, DensityBounds):
        for s, t in _bound_pairs(space, bounds):
            lo, hi = bounds.lower_ratio(s, t), bounds.upper_ratio(s, t)
            mass_s, mass_t = space.cell_mass(s), space.cell_mass(t)
            for c in range(space.n_cells(s)):
                fs = _cell_rows(space, s, c) / mass_s[c]
                for j in space.subcells(s, t, c):
                    ft = _cell_rows(space, t, j) / mass_t[j]
                    a = space.cell_members(t, j)[0]
                    ub.append((ft - hi[a] * fs, 0.0))
                    ub.append((lo[a] * fs - ft, 0.0))
    elif isinstance(bounds, MeasureFamilies):
        for s, t in _bound_pairs(space, bounds):
            for fam in (bounds.upper, bounds.lower):
                for c in range(space.n_cells(s)):
                    core_rows = []
                    sub = space.subcells(s, t, c)
                    for q in fam:
                        w = np.array([np.sum(q.f[space.cell_members(t, j)] * space.probs[space.cell_members(t, j)])
                                      for j in sub])
                        core_rows.append(w / w.sum())
                    mf_blocks.append((s, t, c, sub, np.array(core_rows), extra))
                    extra += len(fam)
    nv = n + extra
    A_eq = [np.concatenate([r, np.zeros(extra)]) for r, _ in eq]
    b_eq = [b for _, b in eq]
    A_ub = [np.concatenate([r, np.zeros(extra)]) for r, _ in ub]
    b_ub = [b for _, b in ub]
    for s, t, c, sub, rows, off in mf_blocks:
        # P0(C) = sum_Q u_Q q^Q(C) for each subcell C, with sum_Q u_Q = P0(A)
        for k, j in enumerate(sub):
            row = np.zeros(nv)
            row[:n] = _cell_rows(space, t, j)
            row[n + off:n + off + rows.shape[0]] = -rows[:, k]
            A_eq.append(row)
            b_eq.append(0.0)
        row = np.zeros(nv)
        row[:n] = _cell_rows(space, s, c)
        row[n + off:n + off + rows.shape[0]] = -1.0
        A_eq.append(row)
        b_eq.append(0.0)
    mass0 = space.cell_mass(0)[space.labels[0]]
    var_bounds = [(eps_pos, mass0[i] / space.probs[i]) for i in range(n)] + [(0.0, 1.0)] * extra
    return nv, np.array(A_ub).reshape(-1, nv), np.array(b_ub), np.array(A_eq).reshape(-1, nv), np.array(b_eq), var_bounds


def _ball_terms(space, bounds):
    """Per (pair, cell): data for ``h(f) = sqrt(sum_C P(C) (f_t(C) - f_s(A))^2 / P(A)) - delta f_s(A)``."""
    terms = []
    for s, t in _bound_pairs(space, bounds):
        delta = bounds.step_deltas[s] if isinstance(bounds, ComposedGoodDeal) else bounds.delta_st(s, t)
        mass_s, mass_t = space.cell_mass(s), space.cell_mass(t)
        for c in range(space.n_cells(s)):
            sub = space.subcells(s, t, c)
            if len(sub) < 2 and delta >= 0:
                continue
            fs = _cell_rows(space, s, c) / mass_s[c]
            D = np.array([_cell_rows(space, t, j) / mass_t[j] - fs for j in sub])
            w = mass_t[sub] / mass_s[c]
            terms.append((s, t, c, D, w, fs, delta))
    return terms


def _h(term, f):
    _, _, _, D, w, fs, delta = term
    dev = D @ f
    norm = float(np.sqrt(np.sum(w * dev * dev)))
    val = norm - delta * float(fs @ f)
    grad = (D.T @ (w * dev)) / norm - delta * fs if norm > 0 else -delta * fs
    return val, grad


def lp_feasibility(ps: PriceSystem, bounds: BoundFamily, eps_pos: float = EPS_POS, tol: float = 1e-9,
                   max_iter: int = MAX_ITER) -> FeasibilityCertificate:
    """Direct search for a strictly positive density meeting every pricing and bound constraint."""
    space = ps.space
    n = space.n_atoms
    nv, A_ub, b_ub, A_eq, b_eq, vb = oracle_system(ps, bounds, eps_pos)
    if not isinstance(bounds, (GoodDeal, ComposedGoodDeal)):
        res = _lp.solve(np.zeros(nv), A_ub, b_ub, A_eq, b_eq, vb)
        if res.status == 0:
            f = res.x[:n]
            return FeasibilityCertificate("feasible", Density(space, f / cond_expect(space, f, 0), tol=1e-8))
        w = _lp.farkas(A_ub, b_ub, A_eq, b_eq, vb)
        if w is None:
            raise NumericalError("LP reported infeasible but phase 1 found a feasible point")
        return FeasibilityCertificate("infeasible", farkas={"kind": "linear", **w.to_dict()})
    terms = _ball_terms(space, bounds)
    # Kelley: minimize tau subject to gradient cuts g . f <= tau of the homogeneous h's
    cuts: list[np.ndarray] = []
    A_eq_t = np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))])
    A_ub_t = np.hstack([A_ub, np.zeros((A_ub.shape[0], 1))]) if A_ub.size else np.zeros((0, nv + 1))
    obj = np.zeros(nv + 1)
    obj[-1] = 1.0
    vb_t = vb + [(-1.0, None)]
    for it in range(1, max_iter + 1):
        G = np.vstack([A_ub_t] + [np.append(g, -1.0)[None, :] for g in cuts]) if cuts else A_ub_t
        hb = np.concatenate([b_ub, np.zeros(len(cuts))]) if cuts else b_ub
        res = _lp.solve(obj, G if G.size else None, hb if G.size else None, A_eq_t, b_eq, vb_t)
        if res.status == 2:
            return _ball_infeasible(A_ub, b_ub, A_eq, b_eq, vb, cuts, it)
        if res.status != 0:
            raise NumericalError(f"oracle LP failed: {res.message}")
        f, tau = res.x[:nv], res.x[-1]
        vals = [_h(term, f) for term in terms]
        worst = max((v for v, _ in vals), default=-np.inf)
        if worst <= tol:
            fd = f[:n] / cond_expect(space, f[:n], 0)
            return FeasibilityCertificate("feasible", Density(space, fd, tol=1e-8), iterations=it)
        if tau > tol:
            return _ball_infeasible(A_ub, b_ub, A_eq, b_eq, vb, cuts, it)
        for (v, g) in vals:
            if v > tol:
                cuts.append(g)
    raise NumericalError(f"good-deal oracle did not converge in {max_iter} iterations")


def _ball_infeasible(A_ub, b_ub, A_eq, b_eq, vb, cuts, it):
    """Farkas witness over the linear rows plus the (valid) homogeneous cuts ``g . f <= 0``."""
    G = np.vstack([A_ub] + [g[None, :] for g in cuts]) if cuts else A_ub
    h = np.concatenate([b_ub, np.zeros(len(cuts))])
    w = _lp.farkas(G, h, A_eq, b_eq, vb, tol=1e-12)
    if w is None:
        raise NumericalError("cutting-plane relaxation infeasible but no certificate was found")
    return FeasibilityCertificate("infeasible", farkas={"kind": "cutting-plane", "cuts": len(cuts), **w.to_dict()},
                                  iterations=it)


def hull_distance(rows: np.ndarray, law: np.ndarray) -> float:
    """Smallest sup-norm distance from ``law`` to the convex hull of ``rows``."""
    k, m = rows.shape
    # variables: u (k), e
    A_ub = np.vstack([np.hstack([rows.T, -np.ones((m, 1))]), np.hstack([-rows.T, -np.ones((m, 1))])])
    b_ub = np.concatenate([law, -law])
    A_eq = np.append(np.ones(k), 0.0)[None, :]
    c = np.zeros(k + 1)
    c[-1] = 1.0
    res = _lp.solve(c, A_ub, b_ub, A_eq, [1.0], [(0.0, None)] * k + [(0.0, None)])
    if res.status != 0:
        raise NumericalError(f"hull distance LP failed: {res.message}")
    return float(res.fun)


def constraint_residuals(ps: PriceSystem, bounds: BoundFamily, f) -> dict:
    """Violation of each oracle constraint group by the density ``f`` (0 means satisfied)."""
    space = ps.space
    fv = f.f if isinstance(f, Density) else np.asarray(f, float)
    n = space.n_atoms
    out = {"normalization": float(np.max(np.abs(cond_expect(space, fv, 0) - 1.0))),
           "positivity": float(max(0.0, -fv.min()))}
    pricing = 0.0
    for (s, t), op in sorted(ps.pairs.items()):
        for X, img in zip(op.basis, op.images):
            for c in range(space.n_cells(s)):
                members = space.cell_members(s, c)
                pricing = max(pricing, abs(float(np.sum(space.probs[members] * fv[members]
                                                        * (X[members] - img[members[0]])))))
    out["pricing"] = pricing
    gap = 0.0
    if isinstance(bounds, DensityBounds):
        for s, t in _bound_pairs(space, bounds):
            ratio = cond_expect(space, fv, t) / cond_expect(space, fv, s)
            gap = max(gap, float(np.max(ratio - bounds.upper_ratio(s, t))),
                      float(np.max(bounds.lower_ratio(s, t) - ratio)))
    elif isinstance(bounds, MeasureFamilies):
        for s, t in _bound_pairs(space, bounds):
            for fam in (bounds.upper, bounds.lower):
                for c in range(space.n_cells(s)):
                    sub = space.subcells(s, t, c)
                    rows = []
                    for q in fam:
                        w = np.array([_cell_rows(space, t, j) @ q.f for j in sub])
                        rows.append(w / w.sum())
                    law = np.array([_cell_rows(space, t, j) @ fv for j in sub])
                    gap = max(gap, hull_distance(np.array(rows), law / law.sum()))
    elif isinstance(bounds, (GoodDeal, ComposedGoodDeal)):
        gap = max((_h(term, fv)[0] for term in _ball_terms(space, bounds)), default=0.0)
    out["bounds"] = float(max(0.0, gap))
    return out


def check_ngd(pm, bounds: GoodDeal, tol: float = 1e-10):
    dens = pm.f if isinstance(pm, PricingMeasure) else pm
    return is_dynamic_ngd_measure(dens, bounds.table, dens.space, tol)
