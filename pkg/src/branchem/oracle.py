"""Exhaustive enumeration of derivation trees for small observations.

This is deliberately independent of the lattice DP: it builds every tree
explicitly and scores it with plain products of production probabilities.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from itertools import product as cartesian

import numpy as np

from .inside_outside import MODES, MULTISET, ORDERED, ExpectedCounts, UnderivableObservationError
from .model import OffspringModel
from .simulator import Observation
from .trees import DerivationTree, count_occurrences, serialize_tree

DEFAULT_GUARD = 8


class GuardExceededError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedTree:
    tree: DerivationTree
    probability: float
    multiplicity: int


def _sub_vectors(x):
    for v in cartesian(*(range(c + 1) for c in x)):
        if any(v):
            yield v


class _Enumerator:
    def __init__(self, model: OffspringModel):
        self.model = model
        self.types = model.types
        self.memo: dict[tuple[int, tuple[int, ...]], list[WeightedTree]] = {}

    def trees(self, v: int, x: tuple[int, ...]) -> list[WeightedTree]:
        key = (v, x)
        if key in self.memo:
            return self.memo[key]
        out: list[WeightedTree] = []
        total = sum(x)
        for prod in self.model.productions:
            if prod.parent != v or prod.probability <= 0:
                continue
            kids = prod.children()
            if len(kids) == 1:
                if prod.offspring == x:
                    out.append(
                        WeightedTree(DerivationTree(v, (DerivationTree(kids[0]),)), prod.probability, 1)
                    )
                continue
            if len(kids) > total:
                continue
            for combo in self._assign(kids, 0, x, None):
                children = tuple(c.tree for c in combo)
                prob = prod.probability * math.prod(c.probability for c in combo)
                mult = math.prod(c.multiplicity for c in combo) * _arrangements(kids, combo)
                out.append(WeightedTree(DerivationTree(v, children), prob, mult))
        self.memo[key] = out
        return out

    def _assign(self, kids, j, remaining, last):
        """Yield lists of WeightedTree for slots j.. that exactly use ``remaining``.

        ``last`` is (vector, position) of the previous slot's choice; within a
        run of identical types choices are nondecreasing so each unordered
        combination appears once.
        """
        d = self.types.d
        c = kids[j]
        slots_left = len(kids) - j - 1
        same_run = j > 0 and kids[j - 1] == c
        if self.types.is_terminal(c):
            unit = tuple(int(i == c) for i in range(d))
            if any(u > r for u, r in zip(unit, remaining)):
                return
            rest = tuple(r - u for r, u in zip(remaining, unit))
            choice = WeightedTree(DerivationTree(c), 1.0, 1)
            if slots_left == 0:
                if not any(rest):
                    yield [choice]
                return
            for tail in self._assign(kids, j + 1, rest, (unit, 0)):
                yield [choice, *tail]
            return
        if slots_left == 0:
            candidates = [remaining] if any(remaining) else []
        else:
            candidates = [s for s in _sub_vectors(remaining) if sum(remaining) - sum(s) >= slots_left]
        for sub in candidates:
            if same_run and sub < last[0]:
                continue
            options = self.trees(c, sub)
            for pos, wt in enumerate(options):
                if same_run and sub == last[0] and pos < last[1]:
                    continue
                if slots_left == 0:
                    yield [wt]
                    continue
                rest = tuple(r - s for r, s in zip(remaining, sub))
                for tail in self._assign(kids, j + 1, rest, (sub, pos)):
                    yield [wt, *tail]


def _arrangements(kids, combo) -> int:
    """Distinct orderings of the chosen subtrees among same-type slots."""
    groups = Counter((k, wt.tree) for k, wt in zip(kids, combo))
    runs = Counter(kids)
    out = 1
    for t, n in runs.items():
        out *= math.factorial(n)
    for g in groups.values():
        out //= math.factorial(g)
    return out


def enumerate_trees(model: OffspringModel, obs: Observation, guard: int = DEFAULT_GUARD) -> list[WeightedTree]:
    """Every distinct unordered tree rooted at ``obs.root`` with yield ``obs.x``.

    Sorted by serialized form.  Raises :class:`GuardExceededError` when the
    observation has more than ``guard`` particles.
    """
    if obs.total > guard:
        raise GuardExceededError(f"observation has {obs.total} particles, guard is {guard}")
    found = _Enumerator(model).trees(obs.root, tuple(obs.x))
    keyed = sorted(((serialize_tree(w.tree, model.types), w) for w in found), key=lambda p: p[0])
    return [w for _, w in keyed]


def oracle_expected_counts(model: OffspringModel, obs: Observation, mode: str = MULTISET,
                           guard: int = DEFAULT_GUARD) -> ExpectedCounts:
    """Posterior-weighted occurrence counts over the enumerated trees.

    Trees are weighted by probability (multiset mode) or by probability
    times multiplicity (ordered mode).
    """
    if mode not in MODES:
        raise ValueError(f"unknown counting mode {mode!r}")
    trees = enumerate_trees(model, obs, guard)
    t = model.types
    weights = np.array(
        [w.probability * (w.multiplicity if mode == ORDERED else 1) for w in trees], dtype=float
    )
    total = float(weights.sum()) if len(trees) else 0.0
    if not total > 0:
        raise UnderivableObservationError(obs)
    index = {p.key: k for k, p in enumerate(model.productions)}
    type_exp = np.zeros(t.m)
    prod_exp = np.zeros(len(model.productions))
    for w, wt in zip(weights / total, trees):
        counts = count_occurrences(wt.tree, t.d)
        for v, c in counts.type_counts.items():
            type_exp[v] += w * c
        for key, c in counts.production_counts.items():
            prod_exp[index[key]] += w * c
    return ExpectedCounts(math.log(total), type_exp, prod_exp)


def oracle_likelihoods(model: OffspringModel, obs: Observation, guard: int = DEFAULT_GUARD) -> dict[str, float]:
    trees = enumerate_trees(model, obs, guard)
    return {
        MULTISET: math.fsum(w.probability for w in trees),
        ORDERED: math.fsum(w.probability * w.multiplicity for w in trees),
    }
