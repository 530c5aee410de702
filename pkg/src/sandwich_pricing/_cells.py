"""One-period markets on a single F_s-cell.

Every operator in the package is F_s-homogeneous, so sandwich checks and
extensions split into independent problems on the F_t-subcells of one
F_s-cell.  A candidate conditional pricing kernel is then a vector ``q``
over the subcells; it must reproduce the marketed prices (``A q = b``) and
lie in the bound set D of the family.

For linear families D is a polytope and everything is an LP.  For good-deal
families D is the intersection of the simplex with a chi-square ball; we
run a cutting-plane loop whose cuts are tangent to D (their levels are
exact support values from water-filling) and restore exact feasibility by
moving toward an interior point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _lp
from .bounds import BallCore, LinearCore, waterfill

RANK_TOL = 1e-10
LOOP_TOL = 1e-8
MAX_CUTS = 500


class SandwichViolation(RuntimeError):
    """The sandwich condition fails on some cell; carries a witness."""

    def __init__(self, message: str, cell: str | None = None, witness: dict | None = None,
                 certificate: dict | None = None, pair: tuple | None = None):
        super().__init__(message)
        self.cell = cell
        self.witness = witness
        self.certificate = certificate
        self.pair = pair


@dataclass
class CellMarket:
    """Reduced pricing equations ``A q = b`` on one cell (orthonormal rows)."""

    pi: np.ndarray
    A: np.ndarray
    b: np.ndarray
    basis_local: np.ndarray
    prices: np.ndarray
    loop_gap: float = 0.0
    loop_combo: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.pi.size

    @property
    def full(self) -> bool:
        return self.A.shape[0] == self.n

    def in_span(self, y: np.ndarray, tol: float = LOOP_TOL) -> bool:
        r = y - self.A.T @ (self.A @ y)
        return float(np.max(np.abs(r))) <= tol * max(1.0, float(np.max(np.abs(y))))

    def price(self, y: np.ndarray) -> float:
        return float(self.b @ (self.A @ y))

    def with_claim(self, y: np.ndarray, value: float) -> "CellMarket":
        return reduce_market(self.pi, np.vstack([self.basis_local, y]), np.append(self.prices, value))


def reduce_market(pi: np.ndarray, basis_local: np.ndarray, prices: np.ndarray) -> CellMarket:
    """Orthonormalize the local basis rows; inconsistent dependent rows are a
    law-of-one-price failure, recorded as ``loop_gap`` with the offending combination."""
    basis_local = np.atleast_2d(np.asarray(basis_local, dtype=float))
    prices = np.asarray(prices, dtype=float)
    U, S, Vt = np.linalg.svd(basis_local, full_matrices=True)
    r = int(np.sum(S > RANK_TOL * max(S[0], 1e-300))) if S.size else 0
    A = Vt[:r]
    b = (U[:, :r].T @ prices) / S[:r]
    null = U[:, r:]
    gap, combo = 0.0, None
    if null.shape[1]:
        resid = null.T @ prices
        k = int(np.argmax(np.abs(resid)))
        if abs(resid[k]) > LOOP_TOL * max(1.0, float(np.max(np.abs(prices)))):
            gap = float(abs(resid[k]))
            combo = null[:, k] / resid[k]  # normalized so that the combination costs 1
    return CellMarket(np.asarray(pi, float), A, b, basis_local, prices, gap, combo)


# --------------------------------------------------------------------------- witnesses

@dataclass
class CellWitness:
    """Local claims with ``Z + X <= Y``, ``Y, Z >= 0`` and ``m(Z) + x(X) - M(Y) = violation``."""

    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    price: float
    violation: float
    method: str
    certificate: dict = field(default_factory=dict)


def _loop_witness(mkt: CellMarket, core) -> CellWitness:
    X = mkt.loop_combo @ mkt.basis_local
    Y = np.maximum(X, 0.0)
    Z = np.zeros_like(X)
    viol = 1.0 + core.m(Z) - core.M(Y)
    return CellWitness(X, Y, Z, 1.0, viol, "law-of-one-price",
                       {"combination": mkt.loop_combo.tolist(), "gap": mkt.loop_gap})


# --------------------------------------------------------------------------- linear cores

def _linear_polytope(core: LinearCore, mkt: CellMarket, majorant_only: bool):
    n = mkt.n
    U = core.upper
    L = np.zeros((1, n)) if majorant_only else core.lower
    nu, nl = U.shape[0], L.shape[0]
    nv = n + nu + nl
    A_ub = np.vstack([np.hstack([np.eye(n), -U.T, np.zeros((n, nl))]),
                      np.hstack([-np.eye(n), np.zeros((n, nu)), L.T])])
    b_ub = np.zeros(2 * n)
    A_eq = np.vstack([np.hstack([mkt.A, np.zeros((mkt.A.shape[0], nu + nl))]),
                      np.concatenate([np.zeros(n), np.ones(nu), np.zeros(nl)]),
                      np.concatenate([np.zeros(n + nu), np.ones(nl)])])
    b_eq = np.concatenate([mkt.b, [1.0, 1.0]])
    bounds = [(0.0, 1.0)] * n + [(0.0, 1.0)] * (nu + nl)
    return nv, A_ub, b_ub, A_eq, b_eq, bounds


def linear_worst(core: LinearCore, mkt: CellMarket, majorant_only: bool = False) -> CellWitness:
    """Exact ``sup m(Z) + x(X) - M(Y)`` over ``Z + X <= Y``, ``0 <= Y, Z <= 1``, ``|X| <= 1``."""
    n, r = mkt.n, mkt.A.shape[0]
    U = core.upper
    L = np.zeros((1, n)) if majorant_only else core.lower
    # variables: alpha (r), Y (n), Z (n), u, v
    nv = r + 2 * n + 2
    iu, iv = r + 2 * n, r + 2 * n + 1
    rows, rhs = [], []
    for i in range(n):  # Z_i + X_i - Y_i <= 0
        row = np.zeros(nv)
        row[:r] = mkt.A[:, i]
        row[r + i] = -1.0
        row[r + n + i] = 1.0
        rows.append(row)
        rhs.append(0.0)
    for k in range(U.shape[0]):  # U_k . Y <= u
        row = np.zeros(nv)
        row[r:r + n] = U[k]
        row[iu] = -1.0
        rows.append(row)
        rhs.append(0.0)
    for k in range(L.shape[0]):  # v <= L_k . Z
        row = np.zeros(nv)
        row[r + n:r + 2 * n] = -L[k]
        row[iv] = 1.0
        rows.append(row)
        rhs.append(0.0)
    for i in range(n):  # -1 <= X_i <= 1
        row = np.zeros(nv)
        row[:r] = mkt.A[:, i]
        rows += [row, -row]
        rhs += [1.0, 1.0]
    c = np.zeros(nv)
    c[:r] = -mkt.b
    c[iu] = 1.0
    c[iv] = -1.0
    bounds = [(None, None)] * r + [(0.0, 1.0)] * (2 * n) + [(None, None)] * 2
    res = _lp.solve(c, np.array(rows), np.array(rhs), bounds=bounds)
    if res.status != 0:
        raise _lp.LPError(f"sandwich LP did not solve: {res.message}")
    z = res.x
    X = mkt.A.T @ z[:r]
    Y = z[r:r + n]
    Z = z[r + n:r + 2 * n]
    viol = core.m(Z) if not majorant_only else 0.0
    viol += float(mkt.b @ z[:r]) - core.M(Y)
    return CellWitness(X, Y, Z, float(mkt.b @ z[:r]), viol, "lp")


def linear_range(core: LinearCore, mkt: CellMarket, y: np.ndarray, majorant_only: bool = False):
    """``(min, max)`` of ``q . y`` over admissible kernels, or None if there are none."""
    nv, A_ub, b_ub, A_eq, b_eq, bounds = _linear_polytope(core, mkt, majorant_only)
    obj = np.concatenate([y, np.zeros(nv - mkt.n)])
    lo = _lp.solve(obj, A_ub, b_ub, A_eq, b_eq, bounds)
    if lo.status == 2:
        return None
    hi = _lp.solve(-obj, A_ub, b_ub, A_eq, b_eq, bounds)
    if lo.status != 0 or hi.status != 0:
        raise _lp.LPError("extension LP did not solve")
    return float(lo.fun), float(-hi.fun), lo.x[:mkt.n], hi.x[:mkt.n]


# --------------------------------------------------------------------------- good-deal ball

def _chi(pi, q):
    return float(np.sqrt(np.sum((q - pi) ** 2 / pi)))


def _face(pi, A, b, zero):
    """Augment ``A q = b`` with ``q_i = 0`` for ``i`` in ``zero``; None if rank deficient."""
    n = pi.size
    E = np.eye(n)[sorted(zero)]
    Aa = np.vstack([A, E]) if zero else A
    ba = np.concatenate([b, np.zeros(len(zero))]) if zero else b
    M = (Aa * pi) @ Aa.T
    if np.linalg.matrix_rank(M, tol=1e-12 * max(1.0, np.abs(M).max())) < Aa.shape[0]:
        return None
    return Aa, ba, M


def _kkt_ok(pi, Aa, n_eq, zero, grad, tol=1e-10):
    """Multipliers of the sign constraints on the face must be nonnegative."""
    if not zero:
        return True, None
    coef, *_ = np.linalg.lstsq(Aa.T, grad, rcond=None)
    kappa = coef[n_eq:]
    worst = int(np.argmin(kappa))
    if kappa[worst] >= -tol * max(1.0, float(np.abs(grad).max())):
        return True, None
    return False, sorted(zero)[worst]


def min_chi(pi, A, b, max_iter=None):
    """Exact ``argmin chi(q)`` over ``A q = b, q >= 0`` by an active-set loop (None if it stalls)."""
    n = pi.size
    zero: set = set()
    for _ in range(max_iter or 4 * n + 4):
        face = _face(pi, A, b, zero)
        if face is None:
            return None
        Aa, ba, M = face
        w = np.linalg.solve(M, ba - Aa @ pi)
        q = pi + pi * (Aa.T @ w)
        neg = [i for i in range(n) if q[i] < -1e-14 and i not in zero]
        if neg:
            zero.add(min(neg, key=lambda i: q[i]))
            continue
        ok, drop = _kkt_ok(pi, Aa, A.shape[0], zero, 2 * (q - pi) / pi)
        if ok:
            q[sorted(zero)] = 0.0
            return np.maximum(q, 0.0)
        zero.discard(drop)
    return None


def min_linear(pi, A, b, delta, y, max_iter=None):
    """Exact ``argmin y . q`` over ``A q = b, q >= 0, chi(q) <= delta`` (None if not resolved)."""
    n = pi.size
    zero: set = set()
    for _ in range(max_iter or 4 * n + 4):
        face = _face(pi, A, b, zero)
        if face is None:
            return None
        Aa, ba, M = face
        w = np.linalg.solve(M, ba - Aa @ pi)
        q0 = pi + pi * (Aa.T @ w)
        r2 = delta ** 2 - float(np.sum((q0 - pi) ** 2 / pi))
        if r2 < 0:
            return None
        y_perp = y - Aa.T @ np.linalg.solve(M, (Aa * pi) @ y)
        norm = float(np.sqrt(np.sum(pi * y_perp ** 2)))
        if norm <= 1e-14 * max(1.0, float(np.abs(y).max())):
            q, nu = q0, 0.0
        else:
            q = q0 - np.sqrt(r2) * pi * y_perp / norm
            nu = norm / (2 * np.sqrt(r2)) if r2 > 0 else np.inf
        neg = [i for i in range(n) if q[i] < -1e-14 and i not in zero]
        if neg:
            zero.add(min(neg, key=lambda i: q[i]))
            continue
        if not np.isfinite(nu):
            return None
        ok, drop = _kkt_ok(pi, Aa, A.shape[0], zero, y + 2 * nu * (q - pi) / pi)
        if ok:
            q[sorted(zero)] = 0.0
            return np.maximum(q, 0.0)
        zero.discard(drop)
    return None


class BallSolver:
    """Kernels ``q`` with ``A q = b`` inside the good-deal set of one cell."""

    def __init__(self, core: BallCore, mkt: CellMarket, tol: float = 1e-11, hint: np.ndarray | None = None,
                 cuts: tuple | None = None):
        self.core = core
        self.mkt = mkt
        self.pi = core.pi
        self.delta = core.delta
        self.tol = tol
        self.G: list[np.ndarray] = list(cuts[0]) if cuts else []
        self.h: list[float] = list(cuts[1]) if cuts else []
        self.iterations = 0
        self.interior: np.ndarray | None = None
        self.witness: CellWitness | None = None
        self._locate(hint)

    # tangent cut to D with outward normal g
    def _cut(self, q):
        c = _chi(self.pi, q)
        g = (q - self.pi) / self.pi / c
        self.G.append(g)
        self.h.append(waterfill(self.pi, g, self.delta)[0])

    def _lp(self, obj, extra=None):
        G = np.array(self.G) if self.G else None
        h = np.array(self.h) if self.G else None
        if extra is not None:
            Ge, he = extra
            G = Ge if G is None else np.vstack([np.hstack([G, np.zeros((G.shape[0], Ge.shape[1] - G.shape[1]))]), Ge])
            h = he if h is None else np.concatenate([h, he])
        nv = obj.size
        A_eq = np.hstack([self.mkt.A, np.zeros((self.mkt.A.shape[0], nv - self.mkt.n))])
        bounds = [(0.0, 1.0)] * self.mkt.n + [(None, None)] * (nv - self.mkt.n)
        return _lp.solve(obj, G, h, A_eq, self.mkt.b, bounds)

    def _locate(self, hint=None):
        pi, mkt, d = self.pi, self.mkt, self.delta
        # chi-minimizer over the pricing plane
        W = mkt.A * pi
        q0 = pi + W.T @ np.linalg.solve(W @ mkt.A.T, mkt.b - mkt.A @ pi)
        if q0.min() >= 0:
            if _chi(pi, q0) <= d:
                self.interior = q0
                return
            self._cut(q0)
            self._certify()
            if self.witness is not None:
                return
        qs = min_chi(pi, mkt.A, mkt.b)
        if qs is not None:
            if _chi(pi, qs) <= d:
                self.interior = qs
                return
            self._cut(qs)
            self._certify()
            if self.witness is not None:
                return
        if hint is not None and hint.min() >= 0 and _chi(pi, hint) <= d \
                and np.max(np.abs(mkt.A @ hint - mkt.b)) <= 1e-12:
            self.interior = np.asarray(hint, float)
            return
        # Kelley on min chi over the pricing polytope
        n = mkt.n
        cuts, rhs = [], []
        best = None
        for _ in range(MAX_CUTS):
            self.iterations += 1
            obj = np.zeros(n + 1)
            obj[-1] = 1.0
            extra = (np.array(cuts), np.array(rhs)) if cuts else None
            res = self._lp(obj, extra) if extra is not None else self._lp_tau0(obj)
            if res.status == 2:
                self._certify()
                return
            q, tau = np.clip(res.x[:n], 0.0, None), res.x[-1]
            c = _chi(pi, q)
            if best is None or c < best[0]:
                best = (c, q)
            if c < d:
                self.interior = q
                return
            if tau > d + 1e-12:
                self._cut(q)
                self._certify()
                if self.witness is not None:
                    return
            if c - tau <= 1e-12:
                break
            g = (q - pi) / pi / c
            cuts.append(np.append(g, -1.0))
            rhs.append(g @ q - c)
            self._cut(q)
        if best[0] <= d + 1e-9:
            self.interior = best[1]
            return
        self._certify()
        if self.witness is None:
            raise _lp.LPError(f"good-deal feasibility undecided after {self.iterations} cuts")

    def _lp_tau0(self, obj):
        n = self.mkt.n
        A_eq = np.hstack([self.mkt.A, np.zeros((self.mkt.A.shape[0], 1))])
        bounds = [(0.0, 1.0)] * n + [(0.0, None)]
        return _lp.solve(obj, None, None, A_eq, self.mkt.b, bounds)

    def _certify(self):
        """Farkas certificate for ``A q = b, G q <= h, 0 <= q <= 1``, converted to a claim triple."""
        n = self.mkt.n
        G = np.array(self.G) if self.G else np.zeros((0, n))
        h = np.array(self.h) if self.G else np.zeros(0)
        w = _lp.farkas(G, h, self.mkt.A, self.mkt.b, [(0.0, 1.0)] * n)
        if w is None or w.value >= -1e-10:
            return
        W = G.T @ w.w_ub if G.size else np.zeros(n)
        X = -self.mkt.A.T @ w.w_eq
        price = -float(w.w_eq @ self.mkt.b)
        Y = np.maximum(W, X)
        shift = max(0.0, -float(Y.min()))
        X, Y, price = X + shift, Y + shift, price + shift
        scale = max(float(np.max(np.abs(X))), float(np.max(np.abs(Y))), 1e-300)
        X, Y, price = X / scale, Y / scale, price / scale
        Z = np.zeros(n)
        viol = price - self.core.M(Y)
        self.witness = CellWitness(X, Y, Z, price, viol, "cutting-plane",
                                   {"farkas_value": w.value, "cuts": len(self.G),
                                    "w_eq": w.w_eq.tolist(), "w_ub": w.w_ub.tolist()})

    @property
    def feasible(self) -> bool:
        return self.interior is not None

    def _restore(self, q):
        """Largest step from the interior point toward ``q`` that stays in the ball."""
        pi, d = self.pi, self.delta
        e = self.interior - pi
        dq = q - self.interior
        a = float(np.sum(dq * dq / pi))
        bb = float(np.sum(e * dq / pi))
        c0 = float(np.sum(e * e / pi)) - d * d
        if a <= 0 or c0 >= 0:
            return self.interior.copy()
        theta = min(1.0, (-bb + np.sqrt(max(bb * bb - a * c0, 0.0))) / a)
        return self.interior + theta * dq

    def minimize(self, y: np.ndarray) -> tuple[float, np.ndarray, float]:
        """``min q . y`` over admissible kernels: (value at a feasible kernel, kernel, lower bound)."""
        if not self.feasible:
            raise SandwichViolation("no admissible kernel on this cell", witness=None)
        n = self.mkt.n
        y = np.asarray(y, float)
        q = min_linear(self.pi, self.mkt.A, self.mkt.b, self.delta, y)
        if q is not None and np.max(np.abs(self.mkt.A @ q - self.mkt.b)) <= 1e-10:
            # tiny overshoot of the budget from rounding is pulled back toward the interior
            if _chi(self.pi, q) > self.delta:
                q = self._restore(q)
            return float(y @ q), q, float(y @ q)
        scale = 1.0 + float(np.max(np.abs(y)))
        best_val, best_q, lower = np.inf, None, -np.inf
        for _ in range(MAX_CUTS):
            self.iterations += 1
            res = self._lp(np.asarray(y, float))
            if res.status != 0:
                break
            q = np.clip(res.x[:n], 0.0, None)
            lower = max(lower, float(y @ q))
            if _chi(self.pi, q) <= self.delta:
                return float(y @ q), q, float(y @ q)
            qr = self._restore(q)
            v = float(y @ qr)
            if v < best_val:
                best_val, best_q = v, qr
            if best_val - lower <= self.tol * scale:
                break
            self._cut(q)
        return best_val, best_q, lower


def ball_range(solver: BallSolver, y: np.ndarray):
    lo, qlo, _ = solver.minimize(y)
    hi, qhi, _ = solver.minimize(-y)
    return lo, -hi, qlo, qhi


# --------------------------------------------------------------------------- dispatch

def cell_check(core, mkt: CellMarket, majorant_only: bool = False) -> CellWitness | None:
    """None when an admissible kernel exists, else a violating claim triple."""
    if mkt.loop_combo is not None:
        return _loop_witness(mkt, core)
    if isinstance(core, LinearCore):
        w = linear_worst(core, mkt, majorant_only)
        return w if w.violation > 1e-10 else None
    solver = BallSolver(core, mkt)
    return None if solver.feasible else solver.witness


def cell_range(core, mkt: CellMarket, y: np.ndarray, majorant_only: bool = False, solver=None):
    """Admissible price interval ``[c, d]`` for the local claim ``y`` plus kernels attaining both ends.

    Raises :class:`SandwichViolation` when no admissible kernel exists.
    """
    if mkt.loop_combo is not None:
        w = _loop_witness(mkt, core)
        raise SandwichViolation("law of one price fails on this cell", witness=_wdict(w))
    if isinstance(core, LinearCore):
        out = linear_range(core, mkt, y, majorant_only)
        if out is None:
            w = linear_worst(core, mkt, majorant_only)
            raise SandwichViolation("no admissible kernel on this cell", witness=_wdict(w))
        return out
    solver = solver or BallSolver(core, mkt)
    if not solver.feasible:
        raise SandwichViolation("no admissible kernel on this cell", witness=_wdict(solver.witness),
                                certificate=solver.witness.certificate if solver.witness else None)
    return ball_range(solver, y)


def _wdict(w: CellWitness | None) -> dict | None:
    if w is None:
        return None
    return {"X": w.X.tolist(), "Y": w.Y.tolist(), "Z": w.Z.tolist(), "price": w.price,
            "violation": w.violation, "method": w.method, **({"certificate": w.certificate} if w.certificate else {})}
