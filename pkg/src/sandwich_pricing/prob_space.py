"""Finite filtered probability spaces and conditional-expectation calculus.

A :class:`FilteredSpace` is a finite sample space with strictly positive
atom probabilities and a chain of refining partitions, one per trading
date.  Every conditional expectation in the package reduces to cell-wise
probability-weighted averages over these partitions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


class SpaceError(ValueError):
    """Raised when a filtered space or random variable is malformed."""


@dataclass(frozen=True, eq=False)
class FilteredSpace:
    """Finite sample space with a refining partition chain over a time grid.

    ``partitions[k]`` is a list of cells, each a list of atom identifiers.
    The last partition must be discrete.
    """

    atoms: tuple
    probs: np.ndarray
    times: np.ndarray
    partitions: tuple
    labels: np.ndarray = field(init=False, repr=False)

    def __init__(self, atoms: Sequence, probs: Sequence[float], times: Sequence[float],
                 partitions: Sequence[Sequence[Sequence]]):
        atoms = tuple(atoms)
        probs = np.asarray(probs, dtype=float)
        times = np.asarray(times, dtype=float)
        errors = _validate(atoms, probs, times, partitions)
        if errors:
            raise SpaceError("; ".join(errors))
        index = {a: i for i, a in enumerate(atoms)}
        labels = np.empty((len(times), len(atoms)), dtype=int)
        cells = []
        for k, part in enumerate(partitions):
            # cells ordered by their first atom so that labels are canonical
            ordered = sorted((sorted(index[a] for a in cell) for cell in part), key=lambda c: c[0])
            for c, members in enumerate(ordered):
                labels[k, members] = c
            cells.append(tuple(tuple(atoms[i] for i in members) for members in ordered))
        labels.setflags(write=False)
        # first atom of each atom's cell, and the conditional-expectation matrices, per level
        rep = np.empty_like(labels)
        cond = []
        for k in range(len(times)):
            firsts = np.full(labels[k].max() + 1, -1)
            for i in range(len(atoms) - 1, -1, -1):
                firsts[labels[k, i]] = i
            rep[k] = firsts[labels[k]]
            member = np.arange(labels[k].max() + 1)[:, None] == labels[k][None, :]
            w = member * probs[None, :]
            w = w / w.sum(axis=1, keepdims=True)
            w.setflags(write=False)
            cond.append(w)
        rep.setflags(write=False)
        cond = tuple(cond)
        object.__setattr__(self, "_rep", rep)
        object.__setattr__(self, "_cond", cond)
        probs.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "partitions", tuple(cells))
        object.__setattr__(self, "labels", labels)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def K(self) -> int:
        """Index of the terminal date."""
        return len(self.times) - 1

    def n_cells(self, k: int) -> int:
        return len(self.partitions[k])

    def cell_members(self, k: int, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels[k] == c)

    def cell_mass(self, k: int) -> np.ndarray:
        """Probability of every cell of partition ``k``."""
        return np.bincount(self.labels[k], weights=self.probs, minlength=self.n_cells(k))

    def cell_id(self, k: int, c: int) -> str:
        return "+".join(str(a) for a in self.partitions[k][c])

    def subcells(self, s: int, t: int, c: int) -> list[int]:
        """Cells of partition ``t`` contained in cell ``c`` of partition ``s``."""
        members = self.cell_members(s, c)
        return sorted(set(self.labels[t, members].tolist()))

    def level_of(self, values: np.ndarray) -> int:
        """Smallest grid index at which ``values`` is cell-wise constant."""
        values = np.asarray(values, dtype=float)
        for k in range(len(self.times)):
            if np.array_equal(values[self._rep[k]], values):
                return k
        return self.K

    def cond_matrix(self, k: int) -> np.ndarray:
        """Matrix ``P`` with ``E[x | F_k] = P @ x``."""
        return self._cond[k][self.labels[k]]

    def cell_averages(self, k: int) -> np.ndarray:
        """Matrix ``W`` (cells x atoms) with ``W @ x`` the per-cell conditional means."""
        return self._cond[k]

    def indicator(self, k: int, c: int) -> np.ndarray:
        return (self.labels[k] == c).astype(float)

    def rv(self, values, level: int | None = None) -> "RandomVariable":
        return RandomVariable(self, values, level)


def _validate(atoms, probs, times, partitions) -> list[str]:
    errors = []
    n = len(atoms)
    if n == 0:
        errors.append("space.atoms: empty sample space")
    if len(set(atoms)) != n:
        errors.append("space.atoms: duplicate atom identifiers")
    if probs.shape != (n,):
        errors.append(f"space.probs: expected {n} probabilities, got {probs.size}")
    else:
        if np.any(~np.isfinite(probs)) or np.any(probs <= 0):
            errors.append("space.probs: probabilities must be strictly positive")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            errors.append(f"space.probs: probabilities sum to {probs.sum()!r}, not 1")
    if times.ndim != 1 or times.size < 1:
        errors.append("space.times: need at least one date")
    else:
        if times[0] != 0:
            errors.append("space.times: grid must start at 0")
        if np.any(np.diff(times) <= 0):
            errors.append("space.times: grid must be strictly increasing")
    if len(partitions) != times.size:
        errors.append(f"space.partitions: expected {times.size} partitions, got {len(partitions)}")
        return errors
    known = set(atoms)
    prev = None
    for k, part in enumerate(partitions):
        seen: list = []
        for cell in part:
            seen.extend(cell)
        if sorted(map(str, seen)) != sorted(map(str, atoms)) or len(seen) != n or not set(seen) <= known:
            errors.append(f"space.partitions[{k}]: not a disjoint cover of the atoms")
            prev = None
            continue
        owner = {a: i for i, cell in enumerate(part) for a in cell}
        if prev is not None:
            for cell in part:
                parents = sorted({prev[a] for a in cell})
                if len(parents) != 1:
                    names = " and ".join(str(list(partitions[k - 1][i])) for i in parents)
                    errors.append(f"space.partitions[{k}]: cell {list(cell)} straddles cells {names} "
                                  f"of partition {k - 1}")
        prev = owner
    if partitions and len(partitions[-1]) != n:
        errors.append("space.partitions: terminal partition must be discrete")
    return errors


@dataclass(frozen=True, eq=False)
class RandomVariable:
    """Atom-indexed real vector together with its measurability level."""

    space: FilteredSpace
    values: np.ndarray
    level: int

    def __init__(self, space: FilteredSpace, values, level: int | None = None):
        values = np.array(values, dtype=float).reshape(-1)
        if values.shape != (space.n_atoms,):
            raise SpaceError(f"expected {space.n_atoms} values, got {values.size}")
        computed = space.level_of(values)
        if level is None:
            level = computed
        elif computed > level:
            raise SpaceError(f"values are not measurable at level {level} (level {computed})")
        values.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "level", int(level))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self):
        return f"RandomVariable({self.values.tolist()}, level={self.level})"


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, RandomVariable) else np.asarray(x, dtype=float)


def _wrap(space: FilteredSpace, values: np.ndarray, like) -> RandomVariable | np.ndarray:
    return RandomVariable(space, values) if isinstance(like, RandomVariable) else values


def cond_expect(space: FilteredSpace, x, k: int):
    """E[x | F_k]: cell-wise probability-weighted average.

    ``x`` may also be a 2-d array of row vectors.  Returns a
    :class:`RandomVariable` when given one, a plain array otherwise.
    """
    v = _values(x)
    out = (v @ space.cell_averages(k).T)[..., space.labels[k]]
    return _wrap(space, out, x)


def cond_moment2(space: FilteredSpace, x, k: int):
    v = _values(x)
    return _wrap(space, cond_expect(space, v * v, k), x)


def cond_variance(space: FilteredSpace, x, k: int):
    """Var(x | F_k), clamped at zero."""
    v = _values(x)
    mean = cond_expect(space, v, k)
    var = cond_expect(space, (v - mean) ** 2, k)
    return _wrap(space, np.maximum(var, 0.0), x)


def pointwise_extrema(xs: Sequence, mode: str = "max"):
    """Atom-wise max or min of a nonempty family of random variables."""
    if len(xs) == 0:
        raise ValueError("extremum over an empty family is ill-posed")
    if mode not in ("max", "min"):
        raise ValueError(f"mode must be 'max' or 'min', not {mode!r}")
    stack = np.vstack([_values(x) for x in xs])
    out = stack.max(axis=0) if mode == "max" else stack.min(axis=0)
    first = xs[0]
    if isinstance(first, RandomVariable):
        return RandomVariable(first.space, out)
    return out
