"""Small dense LP helpers on top of scipy's HiGHS backend.

Besides plain solves, this provides phase-1 Farkas witnesses: nonnegative
combinations of the inequality rows plus free combinations of the equality
rows whose aggregate cannot be satisfied anywhere in the variable box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class LPError(RuntimeError):
    """The LP backend failed for reasons other than infeasibility."""


@dataclass
class FarkasWitness:
    """Multipliers certifying that ``A_eq x = b_eq, A_ub x <= b_ub`` has no solution in the box.

    Aggregating the rows gives ``g(x) = w_eq.(A_eq x - b_eq) + w_ub.(A_ub x - b_ub)``,
    which must be ``<= 0`` at any feasible point.  ``value`` is ``-min_box g``;
    a strictly negative value proves infeasibility.
    """

    w_eq: np.ndarray
    w_ub: np.ndarray
    value: float

    def to_dict(self) -> dict:
        return {"w_eq": self.w_eq.tolist(), "w_ub": self.w_ub.tolist(), "value": self.value}


def _arr(a, ncols):
    if a is None or len(a) == 0:
        return np.zeros((0, ncols))
    return np.atleast_2d(np.asarray(a, dtype=float))


def _vec(b):
    return np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)


def solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Minimize ``c.x``; returns the raw scipy result (status 0/2/3)."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub, A_eq = _arr(A_ub, n), _arr(A_eq, n)
    res = linprog(c, A_ub=A_ub if A_ub.size else None, b_ub=_vec(b_ub) if A_ub.size else None,
                  A_eq=A_eq if A_eq.size else None, b_eq=_vec(b_eq) if A_eq.size else None,
                  bounds=bounds if bounds is not None else (None, None), method="highs")
    if res.status not in (0, 2, 3):
        raise LPError(f"LP backend failure: {res.message}")
    return res


def _box(bounds, n):
    lo = np.empty(n)
    hi = np.empty(n)
    if isinstance(bounds, tuple) and len(bounds) == 2 and not isinstance(bounds[0], (tuple, list)):
        bounds = [bounds] * n
    for i, (a, b) in enumerate(bounds):
        lo[i] = -np.inf if a is None else a
        hi[i] = np.inf if b is None else b
    return lo, hi


def witness_value(w_eq, w_ub, A_ub, b_ub, A_eq, b_eq, bounds) -> float:
    """Evaluate ``-min_box g(x)`` for given multipliers (see :class:`FarkasWitness`)."""
    A_eq = np.asarray(A_eq, dtype=float)
    A_ub = np.asarray(A_ub, dtype=float)
    n = A_eq.shape[1] if A_eq.size else A_ub.shape[1]
    lo, hi = _box(bounds, n)
    coef = np.zeros(n)
    const = 0.0
    if A_eq.size:
        coef += A_eq.T @ w_eq
        const -= w_eq @ _vec(b_eq)
    if A_ub.size:
        coef += A_ub.T @ w_ub
        const -= w_ub @ _vec(b_ub)
    pick = np.where(coef > 0, lo, hi)
    pick = np.where(coef == 0, 0.0, pick)
    with np.errstate(invalid="ignore"):
        m = float(np.sum(coef * pick)) + const
    return float(-m)


def farkas(A_ub, b_ub, A_eq, b_eq, bounds, tol: float = 1e-9) -> FarkasWitness | None:
    """Phase-1 feasibility test; returns a witness if the system is infeasible.

    ``bounds`` must be finite so that the witness can be evaluated on the box.
    """
    A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float)) if A_eq is not None and len(A_eq) else None
    A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float)) if A_ub is not None and len(A_ub) else None
    n = (A_eq if A_eq is not None else A_ub).shape[1]
    m_eq = 0 if A_eq is None else A_eq.shape[0]
    m_ub = 0 if A_ub is None else A_ub.shape[0]
    n_tot = n + 2 * m_eq + m_ub
    c = np.concatenate([np.zeros(n), np.ones(2 * m_eq + m_ub)])
    Aeq = Aub = None
    if m_eq:
        Aeq = np.hstack([A_eq, np.eye(m_eq), -np.eye(m_eq), np.zeros((m_eq, m_ub))])
    if m_ub:
        Aub = np.hstack([A_ub, np.zeros((m_ub, 2 * m_eq)), -np.eye(m_ub)])
    lo, hi = _box(bounds, n)
    full_bounds = list(zip(lo, hi)) + [(0.0, None)] * (2 * m_eq + m_ub)
    res = linprog(c, A_ub=Aub, b_ub=_vec(b_ub) if m_ub else None, A_eq=Aeq,
                  b_eq=_vec(b_eq) if m_eq else None, bounds=full_bounds, method="highs")
    if res.status != 0:
        raise LPError(f"phase-1 LP failed: {res.message}")
    if res.fun <= tol:
        return None
    w_eq = -np.asarray(res.eqlin.marginals) if m_eq else np.zeros(0)
    w_ub = -np.asarray(res.ineqlin.marginals) if m_ub else np.zeros(0)
    w_ub = np.maximum(w_ub, 0.0)
    value = witness_value(w_eq, w_ub, A_ub if m_ub else np.zeros((0, n)), b_ub,
                          A_eq if m_eq else np.zeros((0, n)), b_eq, list(zip(lo, hi)))
    return FarkasWitness(w_eq, w_ub, value)
