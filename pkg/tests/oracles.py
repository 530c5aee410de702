"""Independent reference computations used by the tests."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _mesh(dim, m):
    """Grid points of step ``1/m`` in ``dim`` coordinates with sum at most one."""
    if dim == 0:
        return np.zeros((1, 0))
    grids = np.arange(m + 1) / m
    mesh = np.stack(np.meshgrid(*([grids] * dim), indexing="ij"), -1).reshape(-1, dim)
    return mesh[mesh.sum(1) <= 1 + 1e-12]


def goodd_grid(pi, x, delta, step=1e-3):
    """``(inf, sup)`` of ``q.x`` over ``q >= 0, sum q = 1, sum (q - pi)^2 / pi <= delta^2`` by brute force.

    All coordinates but two run over a grid of the given step; on each grid
    point the remaining two trace a segment whose intersection with the
    chi-ball is found from a quadratic, and the linear objective is read off
    at the segment ends.  Every choice of the two free coordinates is tried, so
    optima lying on a face ``q_i = 0`` are hit exactly by the grid.
    """
    pi, x = np.asarray(pi, float), np.asarray(x, float)
    n = pi.size
    if n == 1:
        return float(x[0]), float(x[0])
    lo, hi = np.inf, -np.inf
    for i in range(n):
        for j in range(i + 1, n):
            order = [k for k in range(n) if k not in (i, j)] + [i, j]
            a, b = _grid_last_pair(pi[order], x[order], delta, int(round(1 / step)))
            lo, hi = min(lo, a), max(hi, b)
    return lo, hi


def _grid_last_pair(pi, x, delta, m):
    n = pi.size
    mesh = _mesh(n - 2, m)
    r = 1.0 - mesh.sum(1)
    fixed = ((mesh - pi[: n - 2]) ** 2 / pi[: n - 2]).sum(1)
    p1, p2 = pi[n - 2], pi[n - 1]
    # (a - p1)^2/p1 + (r - a - p2)^2/p2 <= delta^2 - fixed
    A = 1 / p1 + 1 / p2
    B = -2 * (1 + (r - p2) / p2)
    C = p1 + (r - p2) ** 2 / p2 - (delta ** 2 - fixed)
    disc = B ** 2 - 4 * A * C
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0))
    lo = np.maximum((-B - sq) / (2 * A), 0.0)
    hi = np.minimum((-B + sq) / (2 * A), r)
    ok &= lo <= hi
    base = mesh @ x[: n - 2] + r * x[n - 1]
    slope = x[n - 2] - x[n - 1]
    vals = np.concatenate([(base + lo * slope)[ok], (base + hi * slope)[ok]])
    return float(vals.min()), float(vals.max())
