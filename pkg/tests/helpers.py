"""Shared generators for property and acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np

from branchem.model import OffspringModel, Production, TypeTable
from branchem.oracle import _Enumerator
from branchem.simulator import Observation

MAX_TOTAL = 6


def random_model(rng: np.random.Generator, max_d: int = 4, max_m: int = 2, max_arity: int = 3) -> OffspringModel:
    """A random model with at most ``max_d`` types and ``max_m`` nonterminals.

    Every nonterminal gets at least one emission, so every nonterminal can
    stop, and at least one branching production.  Branching productions draw their offspring with replacement, so
    repeated child types are common.
    """
    m = int(rng.integers(1, max_m + 1))
    d = int(rng.integers(m + 1, max_d + 1))
    names = tuple([f"N{i}" for i in range(m)] + [f"t{i}" for i in range(d - m)])
    types = TypeTable(names, m)
    prods = []
    for v in range(m):
        vectors = set()
        for _ in range(int(rng.integers(1, 3))):
            vectors.add(types.unit(int(rng.integers(d))))
        for _ in range(int(rng.integers(1, 4))):
            arity = int(rng.integers(2, max_arity + 1))
            kids = rng.integers(d, size=arity)
            vectors.add(tuple(int(c) for c in np.bincount(kids, minlength=d)))
        vectors = sorted(vectors)
        weights = rng.dirichlet(np.ones(len(vectors)))
        prods += [Production(v, vec, float(w)) for vec, w in zip(vectors, weights)]
    return _renormalized(types, prods)


def _renormalized(types, prods):
    # dirichlet draws can sum to 1 +- a few ulps; make sums exact enough for validation
    out = []
    for v in range(types.m):
        mine = [p for p in prods if p.parent == v]
        total = sum(p.probability for p in mine)
        out += [Production(p.parent, p.offspring, p.probability / total) for p in mine]
    return OffspringModel(types, tuple(out))


def random_observation(rng: np.random.Generator, model: OffspringModel) -> Observation:
    """A random derivable observation with leaf total at most MAX_TOTAL.

    Vectors with at least three leaves are preferred when the model can
    produce any, since small ones barely exercise the split sums.
    """
    d = model.types.d
    root = int(rng.integers(model.types.m))
    # one enumerator so the memo is shared across candidate vectors
    enum = _Enumerator(model)
    derivable = []
    for x in itertools.product(range(MAX_TOTAL + 1), repeat=d):
        if 1 <= sum(x) <= MAX_TOTAL:
            if enum.trees(root, x):
                derivable.append(Observation(root, x))
    large = [o for o in derivable if o.total >= 3]
    pool = large or derivable
    return pool[int(rng.integers(len(pool)))]


def random_instances(seed: int, n: int):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        model = random_model(rng)
        out.append((model, random_observation(rng, model)))
    return out
