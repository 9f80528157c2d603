"""Inner/outer probabilities over the sub-vector lattice of one observation.

For an observed count vector ``X`` every table is indexed by a sub-vector
``I <= X`` (componentwise) and a type.  ``alpha[I, v]`` is the probability
that a particle of type ``v`` ends up as exactly the particles ``I``;
``beta[I, v]`` is the derivative of the observation probability with respect
to ``alpha[I, v]``, i.e. the weight of everything outside such a subtree.

Two counting modes are supported for productions with several children of the
same type:

``multiset``
    each unordered assignment of sub-vectors to identical-type children is
    counted once (the convention of the classic hand-worked example).
``ordered``
    every ordered composition is counted, which is the exact probability of
    the branching process and agrees with exhaustive tree enumeration.

Both modes give identical numbers when no production has two children of the
same type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .model import OffspringModel, TypeTable
from .simulator import Observation

MULTISET = "multiset"
ORDERED = "ordered"
MODES = (MULTISET, ORDERED)

# max rows * candidates materialized at once while enumerating splits
_CHUNK = 1 << 21


class ModeMismatchError(ValueError):
    pass


class UnderivableObservationError(ValueError):
    def __init__(self, observation: Observation, index: int | None = None):
        where = f" (row {index})" if index is not None else ""
        super().__init__(f"observation{where} {observation.x} has probability 0 under the model")
        self.observation = observation
        self.index = index


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"unknown counting mode {mode!r}; expected one of {MODES}")


class Lattice:
    """All sub-vectors of ``x``; flat index is C-order, i.e. lexicographic."""

    def __init__(self, x: Sequence[int]):
        self.x = tuple(int(c) for c in x)
        self.dims = tuple(c + 1 for c in self.x)
        self.size = int(np.prod(self.dims))
        grids = np.indices(self.dims).reshape(len(self.dims), -1).T
        self.vectors = np.ascontiguousarray(grids, dtype=np.int64)
        self.totals = self.vectors.sum(axis=1)
        # DP order: ascending total, ties lexicographic (flat index)
        self.order = np.lexsort((np.arange(self.size), self.totals))
        self.top = self.size - 1

    def index(self, vec: Sequence[int]) -> int:
        vec = tuple(int(c) for c in vec)
        if len(vec) != len(self.x) or any(not 0 <= a <= b for a, b in zip(vec, self.x)):
            raise KeyError(vec)
        return int(np.ravel_multi_index(vec, self.dims))

    def contains(self, vec: Sequence[int]) -> bool:
        return len(vec) == len(self.x) and all(0 <= a <= b for a, b in zip(vec, self.x))

    def vector(self, i: int) -> tuple[int, ...]:
        return tuple(int(c) for c in self.vectors[i])


@dataclass
class _Group:
    """Split entries of all branching productions with the same arity.

    Row ``r`` says: production ``prod[r]`` at parent cell ``parent[r]`` (flat
    index ``type * N + lattice``) with children at cells ``child[r, :]``.
    Rows are sorted by the parent's total so each level is a contiguous slice.
    """

    prod: np.ndarray
    parent: np.ndarray
    child: np.ndarray
    levels: dict


@dataclass
class _Plan:
    lattice: Lattice
    d: int
    groups: list
    emissions: list  # (production index, parent cell, child lattice index)
    terminal_cells: list  # flat cells of terminal indicators alpha[e_j, j] = 1
    max_level: int


def _splits(lattice: Lattice, kids: tuple[int, ...], m: int, mode: str):
    """Enumerate assignments of nonzero sub-vectors to the child slots.

    Returns (parent lattice index, child lattice index matrix).  Terminal
    children are pinned to their unit vector.  In multiset mode consecutive
    slots of the same type get nondecreasing lattice indices.
    """
    X = np.array(lattice.x, dtype=np.int64)
    d = len(X)
    k = len(kids)
    nonzero = np.arange(1, lattice.size)  # index 0 is the zero vector
    sums = np.zeros((1, d), dtype=np.int64)
    chosen = np.zeros((1, 0), dtype=np.int64)
    total_x = int(X.sum())
    for j, c in enumerate(kids):
        if c >= m:
            if X[c] < 1:
                return np.zeros(0, np.int64), np.zeros((0, k), np.int64)
            cand = np.array([lattice.index(tuple(int(i == c) for i in range(d)))])
        else:
            cand = nonzero
        cand_vec = lattice.vectors[cand]
        need_after = k - j - 1
        out_sums, out_chosen = [], []
        rows_per_chunk = max(1, _CHUNK // max(len(cand), 1))
        for start in range(0, len(sums), rows_per_chunk):
            s = sums[start : start + rows_per_chunk]
            ch = chosen[start : start + rows_per_chunk]
            new = s[:, None, :] + cand_vec[None, :, :]
            ok = np.all(new <= X, axis=2)
            ok &= new.sum(axis=2) <= total_x - need_after
            if mode == MULTISET and j > 0 and kids[j - 1] == c:
                ok &= cand[None, :] >= ch[:, -1][:, None]
            r, q = np.nonzero(ok)
            out_sums.append(new[r, q])
            out_chosen.append(np.column_stack([ch[r], cand[q]]))
        sums = np.concatenate(out_sums) if out_sums else np.zeros((0, d), np.int64)
        chosen = np.concatenate(out_chosen) if out_chosen else np.zeros((0, j + 1), np.int64)
        if len(sums) == 0:
            return np.zeros(0, np.int64), np.zeros((0, k), np.int64)
    parent = np.ravel_multi_index(sums.T, lattice.dims) if len(sums) else np.zeros(0, np.int64)
    return np.asarray(parent, dtype=np.int64), chosen


@lru_cache(maxsize=4096)
def _build_plan(structure_key, x: tuple[int, ...], mode: str) -> _Plan:
    types, keys = structure_key
    lattice = Lattice(x)
    N = lattice.size
    d, m = types.d, types.m
    by_arity: dict[int, list] = {}
    emissions = []
    for k_idx, (parent, offspring) in enumerate(keys):
        kids = tuple(i for i, c in enumerate(offspring) for _ in range(c))
        if len(kids) == 1:
            u = kids[0]
            unit = tuple(int(i == u) for i in range(d))
            if lattice.contains(unit):
                emissions.append((k_idx, parent * N + lattice.index(unit)))
            continue
        par, ch = _splits(lattice, kids, m, mode)
        if len(par) == 0:
            continue
        child_cells = ch + np.array(kids, dtype=np.int64)[None, :] * N
        by_arity.setdefault(len(kids), []).append(
            (np.full(len(par), k_idx, dtype=np.int64), par + parent * N, child_cells)
        )
    groups = []
    for arity in sorted(by_arity):
        parts = by_arity[arity]
        prod = np.concatenate([p[0] for p in parts])
        parent = np.concatenate([p[1] for p in parts])
        child = np.concatenate([p[2] for p in parts])
        level = lattice.totals[parent % N]
        order = np.argsort(level, kind="stable")
        prod, parent, child, level = prod[order], parent[order], child[order], level[order]
        bounds = np.searchsorted(level, np.arange(level.max() + 2) if len(level) else [0])
        levels = {
            int(t): (int(bounds[t]), int(bounds[t + 1]))
            for t in range(len(bounds) - 1)
            if bounds[t + 1] > bounds[t]
        }
        groups.append(_Group(prod, parent, child, levels))
    terminal_cells = []
    for j in range(m, d):
        unit = tuple(int(i == j) for i in range(d))
        if lattice.contains(unit):
            terminal_cells.append(j * N + lattice.index(unit))
    return _Plan(lattice, d, groups, emissions, terminal_cells, int(sum(x)))


def plan_for(model: OffspringModel, x: Sequence[int], mode: str) -> _Plan:
    _check_mode(mode)
    return _build_plan(model.structure_key, tuple(int(c) for c in x), mode)


def _inner(plan: _Plan, probs: np.ndarray) -> np.ndarray:
    N = plan.lattice.size
    alpha = np.zeros(plan.d * N)
    alpha[plan.terminal_cells] = 1.0
    for k, cell in plan.emissions:
        alpha[cell] += probs[k]
    for level in range(2, plan.max_level + 1):
        for g in plan.groups:
            span = g.levels.get(level)
            if span is None:
                continue
            a, b = span
            w = probs[g.prod[a:b]]
            for j in range(g.child.shape[1]):
                w = w * alpha[g.child[a:b, j]]
            alpha += np.bincount(g.parent[a:b], weights=w, minlength=alpha.size)
    return alpha


def _outer(plan: _Plan, probs: np.ndarray, alpha: np.ndarray, root: int, n_prod: int):
    """Outer table plus unnormalized branching-production expectations."""
    N = plan.lattice.size
    beta = np.zeros_like(alpha)
    beta[root * N + plan.lattice.top] = 1.0
    prod_mass = np.zeros(n_prod)
    for level in range(plan.max_level, 1, -1):
        for g in plan.groups:
            span = g.levels.get(level)
            if span is None:
                continue
            a, b = span
            bp = beta[g.parent[a:b]] * probs[g.prod[a:b]]
            if not bp.any():
                continue
            vals = [alpha[g.child[a:b, j]] for j in range(g.child.shape[1])]
            k = len(vals)
            prefix = [np.ones_like(bp)]
            for j in range(k - 1):
                prefix.append(prefix[-1] * vals[j])
            suffix = np.ones_like(bp)
            for j in range(k - 1, -1, -1):
                contrib = bp * prefix[j] * suffix
                beta += np.bincount(g.child[a:b, j], weights=contrib, minlength=beta.size)
                suffix = suffix * vals[j]
            # suffix now holds the full product of children
            prod_mass += np.bincount(g.prod[a:b], weights=bp * suffix, minlength=n_prod)
    return beta, prod_mass


def _expectations(plan, probs, alpha, beta, prod_mass, m, likelihood):
    N = plan.lattice.size
    prod_exp = prod_mass.copy()
    for k, cell in plan.emissions:
        prod_exp[k] += beta[cell] * probs[k]
    type_exp = (alpha[: m * N] * beta[: m * N]).reshape(m, N).sum(axis=1)
    return type_exp / likelihood, prod_exp / likelihood


@dataclass(frozen=True)
class _Table:
    types: TypeTable
    lattice: Lattice
    mode: str
    values: np.ndarray  # shape (d, N)

    def _type(self, v) -> int:
        return self.types.index(v) if isinstance(v, str) else int(v)

    def __getitem__(self, key) -> float:
        vec, v = key
        v = self._type(v)
        if not self.lattice.contains(vec):
            return 0.0
        return float(self.values[v, self.lattice.index(vec)])

    def entries(self):
        """(vector, type name, value) for every nonzero sub-vector and nonterminal, DP order."""
        for i in self.lattice.order:
            if self.lattice.totals[i] == 0:
                continue
            vec = self.lattice.vector(int(i))
            for v in range(self.types.m):
                yield vec, self.types.names[v], float(self.values[v, i])


@dataclass(frozen=True)
class InnerTable(_Table):
    emission_init: tuple = ()  # per (type, unit-vector type) sum of emission probabilities

    def __getitem__(self, key) -> float:
        vec, v = key
        v = self._type(v)
        if sum(vec) == 1 and not self.lattice.contains(vec):
            # the initialization layer is defined for every unit vector
            return float(self.emission_init[v][list(vec).index(1)])
        return super().__getitem__((vec, v))


@dataclass(frozen=True)
class OuterTable(_Table):
    root: int = 0


@dataclass
class ExpectedCounts:
    """Expected type and production counts under the posterior over trees.

    ``type_expectations[v]`` is indexed by nonterminal; ``production_expectations``
    follows the model's production order.  For a single observation
    ``log_likelihood`` is log P(x); after aggregation it is the sum over
    observations.
    """

    log_likelihood: float
    type_expectations: np.ndarray
    production_expectations: np.ndarray
    n_observations: int = 1

    @property
    def likelihood(self) -> float:
        return math.exp(self.log_likelihood)


def _emission_init(model: OffspringModel) -> tuple:
    d = model.types.d
    init = [[0.0] * d for _ in range(d)]
    for p in model.productions:
        if p.is_emission:
            init[p.parent][p.children()[0]] += p.probability
    return tuple(tuple(r) for r in init)


def inner_probabilities(model: OffspringModel, obs: Observation, mode: str = MULTISET):
    """Return ``(InnerTable, likelihood)``; an underivable observation has likelihood 0."""
    plan = plan_for(model, obs.x, mode)
    alpha = _inner(plan, model.probabilities)
    N = plan.lattice.size
    table = InnerTable(
        model.types, plan.lattice, mode, alpha.reshape(model.types.d, N), _emission_init(model)
    )
    return table, float(alpha[obs.root * N + plan.lattice.top])


def _check_table(table: _Table, model: OffspringModel, obs: Observation, mode: str):
    if table.mode != mode:
        raise ModeMismatchError(f"table was computed in {table.mode!r} mode, not {mode!r}")
    if table.lattice.x != obs.x or table.types != model.types:
        raise ValueError("table was computed for a different observation or model")


def outer_probabilities(model: OffspringModel, obs: Observation, inner: InnerTable, mode: str = MULTISET) -> OuterTable:
    _check_table(inner, model, obs, mode)
    plan = plan_for(model, obs.x, mode)
    beta, _ = _outer(plan, model.probabilities, inner.values.ravel(), obs.root, len(model.productions))
    return OuterTable(model.types, plan.lattice, mode, beta.reshape(inner.values.shape), obs.root)


def expected_counts(model: OffspringModel, obs: Observation, inner: InnerTable, outer: OuterTable, mode: str = MULTISET) -> ExpectedCounts:
    _check_table(inner, model, obs, mode)
    _check_table(outer, model, obs, mode)
    plan = plan_for(model, obs.x, mode)
    probs = model.probabilities
    alpha = inner.values.ravel()
    likelihood = float(alpha[obs.root * plan.lattice.size + plan.lattice.top])
    if not likelihood > 0:
        raise UnderivableObservationError(obs)
    # production mass needs the split sums again; rerun the outer sweep
    beta, prod_mass = _outer(plan, probs, alpha, obs.root, len(probs))
    type_exp, prod_exp = _expectations(plan, probs, alpha, beta, prod_mass, model.types.m, likelihood)
    return ExpectedCounts(math.log(likelihood), type_exp, prod_exp)


def observation_counts(model: OffspringModel, obs: Observation, mode: str = MULTISET, probs: np.ndarray | None = None) -> ExpectedCounts:
    """One-shot E-step for one observation (inner, outer, expectations)."""
    plan = plan_for(model, obs.x, mode)
    if probs is None:
        probs = model.probabilities
    alpha = _inner(plan, probs)
    likelihood = float(alpha[obs.root * plan.lattice.size + plan.lattice.top])
    if not likelihood > 0:
        raise UnderivableObservationError(obs)
    beta, prod_mass = _outer(plan, probs, alpha, obs.root, len(probs))
    type_exp, prod_exp = _expectations(plan, probs, alpha, beta, prod_mass, model.types.m, likelihood)
    return ExpectedCounts(math.log(likelihood), type_exp, prod_exp)


def likelihood(model: OffspringModel, obs: Observation, mode: str = MULTISET) -> float:
    plan = plan_for(model, obs.x, mode)
    alpha = _inner(plan, model.probabilities)
    return float(alpha[obs.root * plan.lattice.size + plan.lattice.top])


def aggregate_counts(per_observation: Sequence[ExpectedCounts]) -> ExpectedCounts:
    """Sum expectations over observations (in the given order)."""
    if not per_observation:
        raise ValueError("nothing to aggregate")
    first = per_observation[0]
    type_exp = np.zeros_like(first.type_expectations)
    prod_exp = np.zeros_like(first.production_expectations)
    loglik = 0.0
    n = 0
    for c in per_observation:
        if c.production_expectations.shape != prod_exp.shape:
            raise ValueError("expected counts come from different model structures")
        type_exp += c.type_expectations
        prod_exp += c.production_expectations
        loglik += c.log_likelihood
        n += c.n_observations
    return ExpectedCounts(loglik, type_exp, prod_exp, n)


def format_tables(inner: InnerTable, outer: OuterTable) -> str:
    """TSV dump: ``kind type vector value``."""
    lines = ["kind\ttype\tvector\tvalue"]
    for kind, table in (("alpha", inner), ("beta", outer)):
        for vec, name, value in table.entries():
            lines.append(f"{kind}\t{name}\t{','.join(map(str, vec))}\t{value:.17g}")
    return "\n".join(lines) + "\n"
