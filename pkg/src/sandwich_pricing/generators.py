"""Seeded random instances for property suites.

Each instance has a random branching tree, marketed claims priced by a
hidden strictly positive product density, and a bound family that
contains the hidden density with some slack.  ``infeasible=True`` moves
one one-step price outside its admissible range.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._cells import cell_range, reduce_market
from .bounds import BoundFamily, ComposedGoodDeal, DensityBounds, GoodDeal, MeasureFamilies
from .operators import PriceSystem
from .prob_space import FilteredSpace, cond_expect

FAMILIES = ("density", "measure_families", "good_deal")


@dataclass
class Instance:
    space: FilteredSpace
    ps: PriceSystem
    bounds: BoundFamily
    hidden: np.ndarray
    feasible: bool
    family: str
    seed: int
    perturbed_pair: tuple | None = None


def random_space(rng: np.random.Generator, n_max: int = 16, K_max: int = 4) -> FilteredSpace:
    while True:
        K = int(rng.integers(1, K_max + 1))
        levels = [[[0]]]  # cells as lists of node ids; nodes become atoms at the end
        children = {}
        frontier = [0]
        next_id = 1
        for _ in range(K):
            new = []
            for node in frontier:
                kids = list(range(next_id, next_id + int(rng.integers(1, 4))))
                next_id += len(kids)
                children[node] = kids
                new += kids
            frontier = new
        if 2 <= len(frontier) <= n_max:
            break
    leaves = {}

    def collect(node, depth):
        if depth == K:
            return [node]
        out = []
        for kid in children[node]:
            out += collect(kid, depth + 1)
        return out

    parts = []
    level_nodes = [0]
    for k in range(K + 1):
        parts.append([[f"w{a}" for a in collect(node, k)] for node in level_nodes])
        level_nodes = [kid for node in level_nodes for kid in children.get(node, [])]
    atoms = [a for cell in parts[-1] for a in cell]
    p = rng.dirichlet(np.full(len(atoms), 3.0))
    p = p / p.sum()
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 1.5, K))])
    return FilteredSpace(atoms, p, times, parts)


def _child_laws(space: FilteredSpace, k: int):
    """For each F_{k-1}-cell: its F_k-subcells and their conditional probabilities."""
    out = []
    mass = space.cell_mass(k)
    for c in range(space.n_cells(k - 1)):
        sub = space.subcells(k - 1, k, c)
        out.append((c, sub, mass[sub] / mass[sub].sum()))
    return out


def _ratio_from_kernels(space, k, kernels):
    """Atom-level one-step density from conditional laws per F_{k-1}-cell."""
    r = np.ones(space.n_atoms)
    for (c, sub, pi), q in zip(_child_laws(space, k), kernels):
        for j, qj, pj in zip(sub, q, pi):
            r[space.cell_members(k, j)] = qj / pj
    return r


def _hidden_kernels(space, k, rng, budget: float | None, floor: float = 0.2):
    kernels = []
    for c, sub, pi in _child_laws(space, k):
        if len(sub) == 1:
            kernels.append(np.ones(1))
            continue
        g = rng.normal(size=len(sub))
        g -= g @ pi
        chi = np.sqrt(pi @ g ** 2)
        scale = rng.uniform(0.1, 0.7) * (budget if budget is not None else 0.6) / chi
        neg = max(-(g * scale).min(), 0.0)
        if neg > 1 - floor:
            scale *= (1 - floor) / neg
        kernels.append(pi * (1 + scale * g))
    return kernels


def _claims(space, rng):
    claims = {}
    for t in range(1, space.K + 1):
        n_t = space.n_cells(t)
        rows = [np.ones(space.n_atoms)]
        want = int(rng.integers(1 if t == space.K else 0, 4))
        for _ in range(min(want, n_t - 1)):
            cand = rng.uniform(0.0, 2.0, n_t)[space.labels[t]]
            trial = np.vstack(rows + [cand])
            sv = np.linalg.svd(trial, compute_uv=False)
            if sv[-1] > 1e-6 * sv[0]:
                rows.append(cand)
        claims[t] = rows
    return claims


def _prices(space, claims, f):
    maps = {}
    proc = [cond_expect(space, f, k) for k in range(space.K + 1)]
    for t, rows in claims.items():
        for s in range(0, t):
            maps[(s, t)] = [cond_expect(space, f * X, s) / proc[s] for X in rows]
    return maps


def random_instance(seed: int, family: str = "good_deal", infeasible: bool = False, n_max: int = 16,
                    K_max: int = 4) -> Instance:
    rng = np.random.default_rng(seed)
    space = random_space(rng, n_max, K_max)
    K = space.K
    steps_ratio = []
    bounds: BoundFamily
    if family == "good_deal":
        delta = float(rng.uniform(1.2, 2.5))
        table = GoodDeal(space, delta).table
        for k in range(1, K + 1):
            steps_ratio.append(_ratio_from_kernels(space, k, _hidden_kernels(space, k, rng, table[k - 1, k])))
        bounds = GoodDeal(space, delta)
    elif family == "composed_good_deal":
        deltas = [float(rng.uniform(0.1, 0.8)) for _ in range(K)]
        for k in range(1, K + 1):
            steps_ratio.append(_ratio_from_kernels(space, k, _hidden_kernels(space, k, rng, deltas[k - 1])))
        bounds = ComposedGoodDeal(space, deltas)
    elif family == "density":
        lo, hi = [], []
        for k in range(1, K + 1):
            r = _ratio_from_kernels(space, k, _hidden_kernels(space, k, rng, None))
            steps_ratio.append(r)
            n_k = space.n_cells(k)
            hi.append(r * rng.uniform(1.05, 1.5, n_k)[space.labels[k]])
            lo.append(r * rng.uniform(0.5, 0.95, n_k)[space.labels[k]])
        bounds = DensityBounds(space, lo, hi)
    elif family == "measure_families":
        hidden_k = {}
        for k in range(1, K + 1):
            hidden_k[k] = _hidden_kernels(space, k, rng, None)
            steps_ratio.append(_ratio_from_kernels(space, k, hidden_k[k]))
        nodes = [(k, i) for k in range(1, K + 1) for i, (c, sub, pi) in enumerate(_child_laws(space, k))
                 if len(sub) > 1]
        rng.shuffle(nodes)
        nodes = nodes[:min(4, len(nodes))]
        dirs = {}
        for node in nodes:
            k, i = node
            q = hidden_k[k][i]
            d = rng.normal(size=q.size)
            d -= d.mean()
            eps = 0.5 * float(np.min(q / np.maximum(np.abs(d), 1e-12)))
            dirs[node] = eps * d
        dens = []
        for mask in range(2 ** len(nodes)):
            f = np.ones(space.n_atoms)
            for k in range(1, K + 1):
                kern = []
                for i, q in enumerate(hidden_k[k]):
                    if (k, i) in dirs:
                        bit = (mask >> nodes.index((k, i))) & 1
                        kern.append(q + (1 if bit else -1) * dirs[(k, i)])
                    else:
                        kern.append(q)
                f = f * _ratio_from_kernels(space, k, kern)
            dens.append(f)
        bounds = MeasureFamilies(space, dens)
    else:
        raise ValueError(f"unknown family {family!r}")
    hidden = np.prod(steps_ratio, axis=0)
    claims = _claims(space, rng)
    maps = _prices(space, claims, hidden)
    pair = None
    if infeasible:
        pair = _perturb(space, claims, maps, bounds, rng)
    ps = PriceSystem(space, claims, maps)
    return Instance(space, ps, bounds, hidden, not infeasible, family, seed, pair)


def _perturb(space, claims, maps, bounds, rng) -> tuple[int, int]:
    """Raise the ``(s, K)`` price of a marketed claim above its admissible range on one F_s-cell,
    where ``s`` starts the last step with a branching cell.  Returns the perturbed pair."""
    K = space.K
    s = max(k - 1 for k in range(1, K + 1)
            if any(len(space.subcells(k - 1, k, c)) > 1 for c in range(space.n_cells(k - 1))))
    rows = claims[K]
    for c in rng.permutation(space.n_cells(s)):
        sub = space.subcells(s, K, c)
        first = [space.cell_members(K, j)[0] for j in sub]
        for j in range(1, len(rows)):
            y = rows[j][first]
            if np.ptp(y) < 1e-6:
                continue
            mass = space.cell_mass(K)[sub]
            mkt = reduce_market(mass / mass.sum(), np.ones((1, len(sub))), np.ones(1))
            _, hi, _, _ = cell_range(bounds.core(s, K, c), mkt, y)
            img = np.array(maps[(s, K)][j], dtype=float)
            img[space.cell_members(s, c)] = hi + 0.05 * (1.0 + abs(hi))
            maps[(s, K)][j] = img
            return s, K
    raise RuntimeError("no marketed claim varies on a branching cell")
