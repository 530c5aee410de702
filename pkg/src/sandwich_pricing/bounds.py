"""Price bound families (m_st, M_st), good-deal optimizers and the delta calculus.

Four families are provided:

* :class:`DensityBounds`: linear bounds ``E[m_st X | F_s]`` and ``E[M_st X | F_s]``
  from multiplicative density bands;
* :class:`MeasureFamilies`: bid/ask bounds as the pointwise min/max of
  conditional expectations over finite lists of measures;
* :class:`GoodDeal`: exact sup/inf of ``E_Q[X | F_s]`` over measures whose
  conditional density ``1 + g`` has ``E[g^2 | F_s] <= delta_st^2``;
* :class:`ComposedGoodDeal`: one-step Sharpe-ratio bounds composed recursively.

Each family can describe itself on a single F_s-cell through :meth:`BoundFamily.core`,
which is what the sandwich checker and the extension engine consume.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .prob_space import FilteredSpace, RandomVariable, _values, _wrap, cond_expect, cond_moment2, cond_variance

NEG_TOL = 1e-12


class BoundsError(ValueError):
    """Invalid bound family or out-of-domain argument."""


# --------------------------------------------------------------------------- densities

@dataclass(frozen=True, eq=False)
class Density:
    """Nonnegative density with ``E[f | F_0] = 1``."""

    space: FilteredSpace
    f: np.ndarray

    def __init__(self, space: FilteredSpace, f, tol: float = 1e-10):
        f = np.array(_values(f), dtype=float).reshape(-1)
        if f.shape != (space.n_atoms,):
            raise BoundsError(f"density needs {space.n_atoms} values, got {f.size}")
        if np.any(f < -tol):
            raise BoundsError("density has negative entries")
        dev = np.max(np.abs(cond_expect(space, f, 0) - 1.0))
        if dev > tol:
            raise BoundsError(f"density is not normalized: |E[f|F_0] - 1| = {dev:.3e}")
        f.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "f", f)

    @property
    def equivalent(self) -> bool:
        return bool(self.f.min() > 0)

    def cond(self, k: int) -> np.ndarray:
        """The density process ``E[f | F_k]``."""
        return cond_expect(self.space, self.f, k)

    def expect(self, X, s: int) -> np.ndarray:
        """``E_Q[X | F_s]`` with Q = f.P."""
        fs = self.cond(s)
        if np.any(fs <= 0):
            raise BoundsError(f"measure gives zero mass to a cell of level {s}")
        return cond_expect(self.space, self.f * _values(X), s) / fs


# --------------------------------------------------------------------------- cell cores

@dataclass
class LinearCore:
    """Bounds on one F_s-cell, in coordinates of its F_t-subcells.

    ``M(Y) = max_u upper[u] . Y`` and ``m(Z) = min_u lower[u] . Z`` for ``Y, Z >= 0``.
    """

    pi: np.ndarray
    upper: np.ndarray
    lower: np.ndarray

    def M(self, y):
        return float(np.max(self.upper @ y))

    def m(self, z):
        return float(np.min(self.lower @ z))


@dataclass
class BallCore:
    """Good-deal set on one cell: ``q >= 0``, ``sum q = 1``, ``sum (q - pi)^2 / pi <= delta^2``."""

    pi: np.ndarray
    delta: float

    def M(self, y):
        return waterfill(self.pi, np.asarray(y, float), self.delta)[0]

    def m(self, z):
        return -waterfill(self.pi, -np.asarray(z, float), self.delta)[0]

    def chi(self, q) -> float:
        """Conditional L2 distance of ``q / pi`` from 1."""
        return float(np.sqrt(np.sum((q - self.pi) ** 2 / self.pi)))


# --------------------------------------------------------------------------- water-filling

def waterfill(pi: np.ndarray, x: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
    """Maximize ``q.x`` over ``q >= 0, sum q = 1, sum (q_i - pi_i)^2 / pi_i <= delta^2``.

    ``pi`` must be a probability vector.  The optimizer has the form
    ``q_i = max(0, pi_i (1 + lam (x_i - mu)))``; its support is a set of top
    values of ``x``, so all such prefixes are tried in closed form and the
    best feasible candidate is returned as ``(value, q)``.
    """
    pi = np.asarray(pi, dtype=float)
    x = np.asarray(x, dtype=float)
    d2 = float(delta) ** 2
    order = np.argsort(-x, kind="stable")
    xs, ps = x[order], pi[order]
    n = xs.size
    cum_p = np.cumsum(ps)
    best_val, best_q = -np.inf, None
    for k in range(1, n + 1):
        if k < n and xs[k] == xs[k - 1]:
            continue
        p_s = cum_p[k - 1] if k < n else 1.0
        base = (1.0 - p_s) / p_s
        if base > d2 * (1 + 1e-12) + 1e-15:
            continue
        w = ps[:k]
        xbar = w @ xs[:k] / p_s
        dev = xs[:k] - xbar
        var = 0.0 if xs[0] == xs[k - 1] else float(w @ dev ** 2)
        lam = np.sqrt(max(d2 - base, 0.0) / var) if var > 0 else 0.0
        q_s = w / p_s + lam * w * dev
        if q_s.min() < -1e-13:
            continue
        val = xbar + lam * var
        if val > best_val:
            q = np.zeros(n)
            q[order[:k]] = np.maximum(q_s, 0.0)
            best_val, best_q = val, q
    if best_q is None:  # pragma: no cover - pi itself is always a candidate
        raise BoundsError("water-filling found no feasible support")
    return float(best_val), best_q


def goodd_exact(space: FilteredSpace, s: int, t: int, X, delta_st: float, direction: str = "sup",
                return_optimizer: bool = False):
    """Exact sup (or inf) of ``E[(1+g) X | F_s]`` over the good-deal set on each F_s-cell.

    With ``return_optimizer`` also returns the optimal conditional density
    ``1 + g`` (atom-wise, conditional mean one on each F_s-cell).
    """
    if delta_st < 0:
        raise BoundsError("delta_st must be nonnegative")
    if direction not in ("sup", "inf"):
        raise BoundsError(f"direction must be 'sup' or 'inf', not {direction!r}")
    v = _values(X)
    sign = 1.0 if direction == "sup" else -1.0
    out = np.empty(space.n_atoms)
    density = np.empty(space.n_atoms)
    mass = space.cell_mass(s)
    for c in range(space.n_cells(s)):
        idx = space.cell_members(s, c)
        pi = space.probs[idx] / mass[c]
        val, q = waterfill(pi, sign * v[idx], delta_st)
        out[idx] = sign * val
        density[idx] = q / pi
    res = _wrap(space, out, X)
    return (res, density) if return_optimizer else res


def goodd_closed_form(space: FilteredSpace, s: int, X, delta_st: float, direction: str = "sup"):
    """``E[X|F_s] +/- delta_st * sqrt(Var(X|F_s))`` (no positivity constraint)."""
    v = _values(X)
    sign = 1.0 if direction == "sup" else -1.0
    out = cond_expect(space, v, s) + sign * delta_st * np.sqrt(cond_variance(space, v, s))
    return _wrap(space, out, X)


# --------------------------------------------------------------------------- delta calculus

def delta_table(delta: float, times: Sequence[float]) -> np.ndarray:
    """Matrix of ``delta_st = delta**(t - s) - 1`` for ``s <= t`` (NaN below the diagonal)."""
    if not delta > 1:
        raise BoundsError("delta must exceed 1")
    times = np.asarray(times, dtype=float)
    gap = times[None, :] - times[:, None]
    table = np.where(gap >= 0, np.power(delta, np.maximum(gap, 0.0)) - 1.0, np.nan)
    np.fill_diagonal(table, 0.0)
    return table


def composition_defect(table: np.ndarray) -> float:
    """Largest violation of ``delta_rt = delta_rs delta_st + delta_rs + delta_st`` over grid triples."""
    K = table.shape[0]
    worst = 0.0
    for r in range(K):
        for s in range(r, K):
            for t in range(s, K):
                lhs = table[r, s] * table[s, t] + table[r, s] + table[s, t]
                worst = max(worst, abs(lhs - table[r, t]))
    return worst


def c_operator(space: FilteredSpace, s: int, t: int, delta_st: float, X):
    """``delta_st * sqrt(E[X^2 | F_s])``."""
    if delta_st < 0:
        raise BoundsError("delta_st must be nonnegative")
    v = _values(X)
    return _wrap(space, delta_st * np.sqrt(cond_moment2(space, v, s)), X)


# --------------------------------------------------------------------------- families

class BoundFamily:
    """Common interface of the bound families."""

    variant: str = ""
    space: FilteredSpace

    def _check_arg(self, s, t, X) -> np.ndarray:
        K = self.space.K
        if not (0 <= s <= t <= K):
            raise BoundsError(f"invalid grid pair ({s}, {t})")
        v = _values(X)
        if v.shape != (self.space.n_atoms,):
            raise BoundsError(f"claim needs {self.space.n_atoms} values")
        if np.any(v < -NEG_TOL):
            raise BoundsError("bounds are defined on the nonnegative cone only")
        if self.space.level_of(v) > t:
            raise BoundsError(f"claim is not measurable at level {t}")
        return np.maximum(v, 0.0)

    def eval_M(self, s: int, t: int, X):
        v = self._check_arg(s, t, X)
        return _wrap(self.space, self._upper(s, t, v), X)

    def eval_m(self, s: int, t: int, X):
        v = self._check_arg(s, t, X)
        return _wrap(self.space, self._lower(s, t, v), X)

    def core(self, s: int, t: int, c: int):
        """Description of the bounds on cell ``c`` of partition ``s`` over its F_t-subcells."""
        raise NotImplementedError

    def supports_core(self, s: int, t: int) -> bool:
        return True

    def _subcells(self, s, t, c):
        sub = self.space.subcells(s, t, c)
        mass_t = self.space.cell_mass(t)[sub]
        return sub, mass_t / mass_t.sum()

    def to_dict(self) -> dict:
        raise NotImplementedError


class DensityBounds(BoundFamily):
    """Multiplicative density bands ``m_st <= f_t / f_s <= M_st``.

    Stored as one-step ratios; ``M_st`` for longer intervals is the product
    of the one-step ratios, which makes multiplicativity hold by construction.
    """

    variant = "density"

    def __init__(self, space: FilteredSpace, lower_steps: Sequence, upper_steps: Sequence):
        K = space.K
        if len(lower_steps) != K or len(upper_steps) != K:
            raise BoundsError(f"need one lower/upper ratio per step ({K})")
        self.space = space
        self.lower_steps = [np.array(_values(a), dtype=float) for a in lower_steps]
        self.upper_steps = [np.array(_values(a), dtype=float) for a in upper_steps]
        for k, (lo, hi) in enumerate(zip(self.lower_steps, self.upper_steps), start=1):
            if lo.shape != (space.n_atoms,) or hi.shape != (space.n_atoms,):
                raise BoundsError(f"step {k}: ratios need {space.n_atoms} values")
            if np.any(lo <= 0):
                raise BoundsError(f"step {k}: lower density must be strictly positive")
            if np.any(lo > hi):
                raise BoundsError(f"step {k}: lower density exceeds upper density")
            if space.level_of(lo) > k or space.level_of(hi) > k:
                raise BoundsError(f"step {k}: densities must be measurable at level {k}")

    @classmethod
    def from_pairs(cls, space: FilteredSpace, pairs: dict, tol: float = 1e-10) -> "DensityBounds":
        """Build from a mapping ``(s, t) -> (m_st, M_st)``; adjacent pairs are required,
        longer ones are checked for multiplicativity."""
        K = space.K
        lo, hi = [], []
        for k in range(1, K + 1):
            if (k - 1, k) not in pairs:
                raise BoundsError(f"missing density bounds for step ({k - 1}, {k})")
            a, b = pairs[(k - 1, k)]
            lo.append(a)
            hi.append(b)
        fam = cls(space, lo, hi)
        for (s, t), (a, b) in pairs.items():
            if t - s > 1:
                dev = max(np.max(np.abs(fam.lower_ratio(s, t) - _values(a))),
                          np.max(np.abs(fam.upper_ratio(s, t) - _values(b))))
                if dev > tol:
                    raise BoundsError(f"density bounds for ({s}, {t}) are not multiplicative "
                                      f"(deviation {dev:.3e})")
        return fam

    @classmethod
    def from_terminal(cls, space: FilteredSpace, m, M) -> "DensityBounds":
        """Bands ``M_st = E[M|F_0]^((t-s)/T) E[M|F_t] / E[M|F_s]`` from terminal densities."""
        m, M = _values(m), _values(M)
        if np.any(m <= 0) or np.any(M <= 0):
            raise BoundsError("terminal bounds must be strictly positive")
        times = space.times
        T = times[-1]

        def steps(D):
            base = cond_expect(space, D, 0)
            out = []
            for k in range(1, space.K + 1):
                w = (times[k] - times[k - 1]) / T
                out.append(base ** w * cond_expect(space, D, k) / cond_expect(space, D, k - 1))
            return out

        return cls(space, steps(m), steps(M))

    def lower_ratio(self, s: int, t: int) -> np.ndarray:
        return np.prod([self.lower_steps[k - 1] for k in range(s + 1, t + 1)], axis=0) \
            if t > s else np.ones(self.space.n_atoms)

    def upper_ratio(self, s: int, t: int) -> np.ndarray:
        return np.prod([self.upper_steps[k - 1] for k in range(s + 1, t + 1)], axis=0) \
            if t > s else np.ones(self.space.n_atoms)

    def _upper(self, s, t, v):
        return cond_expect(self.space, self.upper_ratio(s, t) * v, s)

    def _lower(self, s, t, v):
        return cond_expect(self.space, self.lower_ratio(s, t) * v, s)

    def core(self, s, t, c):
        sub, pi = self._subcells(s, t, c)
        first = [self.space.cell_members(t, j)[0] for j in sub]
        up = self.upper_ratio(s, t)[first]
        lo = self.lower_ratio(s, t)[first]
        return LinearCore(pi, (pi * up)[None, :], (pi * lo)[None, :])

    def to_dict(self):
        return {"variant": self.variant,
                "steps": [{"m": a.tolist(), "M": b.tolist()}
                          for a, b in zip(self.lower_steps, self.upper_steps)]}


class MeasureFamilies(BoundFamily):
    """Bid/ask bounds: ``M = max over upper`` and ``m = min over lower`` of ``E_Q[X | F_s]``."""

    variant = "measure_families"

    def __init__(self, space: FilteredSpace, upper: Sequence, lower: Sequence | None = None):
        self.space = space
        self.upper = [q if isinstance(q, Density) else Density(space, q) for q in upper]
        self.lower = [q if isinstance(q, Density) else Density(space, q) for q in (lower if lower is not None else upper)]
        if not self.upper or not self.lower:
            raise BoundsError("measure families must be nonempty")
        self._F_up = np.array([q.f for q in self.upper])
        self._F_lo = np.array([q.f for q in self.lower])
        for q in self.upper + self.lower:
            for k in range(space.K + 1):
                if np.any(q.cond(k) <= 0):
                    raise BoundsError(f"a listed measure gives zero mass to a cell of level {k}")

    def _expect_all(self, F, v, s):
        W = self.space.cell_averages(s)
        lab = self.space.labels[s]
        return (((F * v) @ W.T) / (F @ W.T))[:, lab]

    def _upper(self, s, t, v):
        return self._expect_all(self._F_up, v, s).max(axis=0)

    def _lower(self, s, t, v):
        return self._expect_all(self._F_lo, v, s).min(axis=0)

    def _rows(self, qs, s, t, c):
        sub, pi = self._subcells(s, t, c)
        rows = []
        for q in qs:
            w = np.array([np.sum(q.f[self.space.cell_members(t, j)] * self.space.probs[self.space.cell_members(t, j)])
                          for j in sub])
            rows.append(w / w.sum())
        return pi, np.array(rows)

    def core(self, s, t, c):
        pi, up = self._rows(self.upper, s, t, c)
        _, lo = self._rows(self.lower, s, t, c)
        return LinearCore(pi, up, lo)

    def to_dict(self):
        return {"variant": self.variant, "upper": [q.f.tolist() for q in self.upper],
                "lower": [q.f.tolist() for q in self.lower]}


class GoodDeal(BoundFamily):
    """Dynamic good-deal bounds with ``delta_st = delta**(t - s) - 1``."""

    variant = "good_deal"

    def __init__(self, space: FilteredSpace, delta: float, positivity_constrained: bool = True):
        if not delta > 1:
            raise BoundsError("delta must exceed 1")
        self.space = space
        self.delta = float(delta)
        self.positivity_constrained = positivity_constrained
        self.table = delta_table(self.delta, space.times)

    @classmethod
    def from_horizon_delta(cls, space: FilteredSpace, delta_0T: float, **kw) -> "GoodDeal":
        """Choose the base so that ``delta_0T`` is the requested value."""
        return cls(space, (1.0 + delta_0T) ** (1.0 / space.times[-1]), **kw)

    def delta_st(self, s: int, t: int) -> float:
        return float(self.table[s, t])

    def _upper(self, s, t, v):
        d = self.delta_st(s, t)
        if self.positivity_constrained:
            return goodd_exact(self.space, s, t, v, d, "sup")
        return goodd_closed_form(self.space, s, v, d, "sup")

    def _lower(self, s, t, v):
        d = self.delta_st(s, t)
        if self.positivity_constrained:
            return goodd_exact(self.space, s, t, v, d, "inf")
        return goodd_closed_form(self.space, s, v, d, "inf")

    def core(self, s, t, c):
        _, pi = self._subcells(s, t, c)
        return BallCore(pi, self.delta_st(s, t))

    def to_dict(self):
        return {"variant": self.variant, "delta": self.delta,
                "positivity_constrained": self.positivity_constrained}


class ComposedGoodDeal(BoundFamily):
    """One-step Sharpe-ratio bounds ``E[X|F_k] +/- delta_k sd(X|F_k)`` composed over the grid."""

    variant = "composed_good_deal"

    def __init__(self, space: FilteredSpace, step_deltas: Sequence[float]):
        step_deltas = [float(d) for d in step_deltas]
        if len(step_deltas) != space.K:
            raise BoundsError(f"need one delta per step ({space.K}), got {len(step_deltas)}")
        if any(d < 0 for d in step_deltas):
            raise BoundsError("step deltas must be nonnegative")
        self.space = space
        self.step_deltas = step_deltas

    def _compose(self, s, t, v, sign):
        y = v
        for k in range(t - 1, s - 1, -1):
            y = cond_expect(self.space, y, k) + sign * self.step_deltas[k] * np.sqrt(cond_variance(self.space, y, k))
        return y

    def _upper(self, s, t, v):
        return self._compose(s, t, v, 1.0)

    def _lower(self, s, t, v):
        return self._compose(s, t, v, -1.0)

    def supports_core(self, s, t):
        return t - s <= 1

    def core(self, s, t, c):
        if t - s != 1:
            raise BoundsError("composed good-deal bounds have a cell description on adjacent pairs only")
        _, pi = self._subcells(s, t, c)
        return BallCore(pi, self.step_deltas[s])

    def delta_table(self) -> np.ndarray:
        """Interval budgets implied by compounding the one-step deltas."""
        K = self.space.K
        table = np.full((K + 1, K + 1), np.nan)
        for s in range(K + 1):
            acc = 1.0
            table[s, s] = 0.0
            for t in range(s + 1, K + 1):
                acc *= 1.0 + self.step_deltas[t - 1]
                table[s, t] = acc - 1.0
        return table

    def geometric_base(self, tol: float = 1e-12) -> float | None:
        """Base ``delta`` with ``delta_k = delta**(dt_k) - 1`` for every step, if one exists."""
        dts = np.diff(self.space.times)
        bases = [(1.0 + d) ** (1.0 / dt) for d, dt in zip(self.step_deltas, dts)]
        if max(bases) - min(bases) <= tol * max(bases):
            return float(bases[0])
        return None

    def to_dict(self):
        return {"variant": self.variant, "step_deltas": list(self.step_deltas)}


def eval_M(bounds: BoundFamily, s: int, t: int, X):
    return bounds.eval_M(s, t, X)


def eval_m(bounds: BoundFamily, s: int, t: int, X):
    return bounds.eval_m(s, t, X)


# --------------------------------------------------------------------------- stability checks

@dataclass
class StabilityReport:
    stable: bool
    checked: int
    counterexamples: list = field(default_factory=list)
    worst_slack: float = 0.0


def paste(space: FilteredSpace, f1: np.ndarray, f2: np.ndarray, k: int, cell: int | None) -> np.ndarray:
    """Density of ``Q1`` up to level ``k`` continued with ``Q2``'s conditional law, on ``cell``
    (the whole space when ``cell`` is None); ``Q1`` elsewhere."""
    f2k = cond_expect(space, f2, k)
    pasted = cond_expect(space, f1, k) * f2 / f2k
    if cell is None:
        return pasted
    on = space.labels[k] == cell
    return np.where(on, pasted, f1)


def check_m_stability(space: FilteredSpace, family, tol: float = 1e-10, **kw) -> StabilityReport:
    """Closure checks for measure families.

    ``family`` may be a list of densities (closure under pasting at every
    grid date, on single cells and on the whole space) or a :class:`GoodDeal`
    family, in which case products of sampled one-step members are checked
    against the composed budget (keywords ``r, s, t, n_samples, seed``).
    """
    if isinstance(family, GoodDeal):
        return _check_goodd_products(space, family, tol=tol, **kw)
    dens = [d.f if isinstance(d, Density) else np.asarray(d, float) for d in family]
    report = StabilityReport(True, 0)
    for i, f1 in enumerate(dens):
        for j, f2 in enumerate(dens):
            if i == j:
                continue
            for k in range(space.K + 1):
                for cell in [None] + list(range(space.n_cells(k))):
                    g = paste(space, f1, f2, k, cell)
                    report.checked += 1
                    if not any(np.max(np.abs(g - h)) <= tol for h in dens):
                        report.stable = False
                        report.counterexamples.append(
                            {"first": i, "second": j, "level": k,
                             "cell": "all" if cell is None else space.cell_id(k, cell),
                             "pasted": g.tolist()})
    return report


def sample_goodd_member(space: FilteredSpace, s: int, t: int, delta_st: float, rng: np.random.Generator,
                       floor: float = 0.0) -> np.ndarray:
    """Random ``g`` at level ``t`` with ``E[g|F_s] = 0``, ``E[g^2|F_s] <= delta_st^2`` and ``1 + g >= floor``."""
    h = rng.normal(size=space.n_cells(t))[space.labels[t]]
    h = h - cond_expect(space, h, s)
    norm = np.sqrt(cond_moment2(space, h, s))
    scale = np.where(norm > 0, delta_st * rng.uniform(0, 1, space.n_cells(s))[space.labels[s]] / np.where(norm > 0, norm, 1), 0.0)
    g = scale * h
    lab = space.labels[s]
    neg = np.zeros(space.n_cells(s))
    np.maximum.at(neg, lab, -g)
    shrink = np.where(neg > 1 - floor, (1 - floor) / np.where(neg > 0, neg, 1), 1.0)
    return g * shrink[lab]


def _check_goodd_products(space, family: GoodDeal, r: int = 0, s: int | None = None, t: int | None = None,
                          n_samples: int = 100, seed: int = 0, tol: float = 1e-10) -> StabilityReport:
    K = space.K
    s = K // 2 if s is None else s
    t = K if t is None else t
    d_rs, d_st, d_rt = family.delta_st(r, s), family.delta_st(s, t), family.delta_st(r, t)
    rng = np.random.default_rng(seed)
    report = StabilityReport(True, 0, worst_slack=-np.inf)
    for _ in range(n_samples):
        g1 = sample_goodd_member(space, r, s, d_rs, rng)
        g2 = sample_goodd_member(space, s, t, d_st, rng)
        prod = g1 * g2 + g1 + g2
        slack = float(np.max(cond_moment2(space, prod, r) - d_rt ** 2))
        report.checked += 1
        report.worst_slack = max(report.worst_slack, slack)
        if slack > tol:
            report.stable = False
            report.counterexamples.append({"g_rs": g1.tolist(), "g_st": g2.tolist(), "excess": slack})
    return report


@dataclass
class NGDReport:
    passes: bool
    entries: list
    static_excess: float


def is_dynamic_ngd_measure(f, table: np.ndarray, space: FilteredSpace, tol: float = 1e-10) -> NGDReport:
    """Check ``E[(f_t / f_s - 1)^2 | F_s] <= delta_st^2`` for every grid pair ``s <= t``."""
    fv = f.f if isinstance(f, Density) else _values(f)
    K = space.K
    proc = [cond_expect(space, fv, k) for k in range(K + 1)]
    entries = []
    ok = True
    for s in range(K + 1):
        if np.any(proc[s] <= 0):
            raise BoundsError(f"measure is not equivalent: density vanishes on a cell of level {s}")
        for t in range(s + 1, K + 1):
            k_st = proc[t] / proc[s] - 1.0
            excess = float(np.max(cond_moment2(space, k_st, s) - table[s, t] ** 2))
            entries.append({"s": s, "t": t, "excess": excess})
            ok &= excess <= tol
    static = next((e["excess"] for e in entries if e["s"] == 0 and e["t"] == K), 0.0)
    return NGDReport(bool(ok), entries, static)
