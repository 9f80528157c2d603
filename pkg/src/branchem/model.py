"""Particle types, productions and offspring models, plus the model file format.

A model file looks like::

    nonterminals: T1 T2
    terminals: T1t T2t
    T1 -> T1 T1 : 0.25
    T1 -> T1t : 0.25
    ...

Nonterminal types get indices ``0..m-1`` in declaration order, terminal types
``m..d-1``.  Offspring are stored as count vectors over all ``d`` types, so
``T1 -> T1 T1`` and ``T1 -> T1 T1`` written in any order are the same
production.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PROB_SUM_TOL = 1e-9

_BAD_NAME = re.compile(r"\s|->|:|#")


class ModelError(ValueError):
    """Base class for invalid models and model files."""


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownTypeError(ModelError):
    pass


class DuplicateProductionError(ModelError):
    pass


class ProbabilitySumError(ModelError):
    def __init__(self, type_name: str, total: float):
        super().__init__(
            f"probabilities of {type_name} sum to {total!r}, expected 1"
        )
        self.type_name = type_name
        self.total = total


class TerminalParentError(ModelError):
    pass


@dataclass(frozen=True)
class TypeTable:
    names: tuple[str, ...]
    m: int

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not 1 <= self.m <= len(self.names):
            raise ModelError(f"need 1 <= m <= d, got m={self.m}, d={len(self.names)}")
        seen = set()
        for name in self.names:
            if not name or _BAD_NAME.search(name):
                raise ModelError(f"invalid type name {name!r}")
            if name in seen:
                raise ModelError(f"duplicate type name {name!r}")
            seen.add(name)

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def nonterminals(self) -> tuple[str, ...]:
        return self.names[: self.m]

    @property
    def terminals(self) -> tuple[str, ...]:
        return self.names[self.m :]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownTypeError(f"unknown type name {name!r}") from None

    def is_terminal(self, i: int) -> bool:
        return i >= self.m

    def unit(self, i: int) -> tuple[int, ...]:
        return tuple(int(k == i) for k in range(self.d))

    def vector(self, names: Iterable[str]) -> tuple[int, ...]:
        counts = [0] * self.d
        for name in names:
            counts[self.index(name)] += 1
        return tuple(counts)


@dataclass(frozen=True)
class Production:
    """``parent -> offspring`` where offspring is a count vector over all types."""

    parent: int
    offspring: tuple[int, ...]
    probability: float = 0.0

    @property
    def total(self) -> int:
        return sum(self.offspring)

    @property
    def is_emission(self) -> bool:
        return self.total == 1

    @property
    def key(self) -> tuple[int, tuple[int, ...]]:
        return (self.parent, self.offspring)

    def children(self) -> tuple[int, ...]:
        """Child type indices, expanded and sorted."""
        return tuple(i for i, c in enumerate(self.offspring) for _ in range(c))

    def label(self, types: TypeTable) -> str:
        kids = "+".join(types.names[i] for i in self.children())
        return f"{types.names[self.parent]}->{kids}"


def _sort_key(prod: Production):
    return (prod.parent, prod.offspring)


@dataclass(frozen=True)
class OffspringModel:
    """Validated set of productions; immutable.

    Productions are kept in canonical order (parent index, then offspring
    vector lexicographically), which is also the order of ``probabilities``.
    """

    types: TypeTable
    productions: tuple[Production, ...]

    def __post_init__(self):
        prods = tuple(sorted(self.productions, key=_sort_key))
        object.__setattr__(self, "productions", prods)
        self._validate()

    def _validate(self):
        t = self.types
        seen = set()
        for prod in self.productions:
            if not 0 <= prod.parent < t.d:
                raise ModelError(f"parent index {prod.parent} out of range")
            if t.is_terminal(prod.parent):
                raise TerminalParentError(
                    f"terminal type {t.names[prod.parent]} cannot have productions"
                )
            if len(prod.offspring) != t.d or any(c < 0 for c in prod.offspring):
                raise ModelError(f"bad offspring vector {prod.offspring}")
            if prod.total < 1:
                raise ModelError(f"{t.names[prod.parent]} has a production with no offspring")
            if prod.key in seen:
                raise DuplicateProductionError(
                    f"duplicate production {prod.label(t)}"
                )
            seen.add(prod.key)
            p = prod.probability
            if not (math.isfinite(p) and 0.0 <= p <= 1.0):
                raise ModelError(f"probability of {prod.label(t)} is {p!r}")
        for v in range(t.m):
            ps = [p.probability for p in self.productions if p.parent == v]
            if not ps:
                raise ModelError(f"nonterminal {t.names[v]} has no productions")
            total = math.fsum(ps)
            if abs(total - 1.0) > PROB_SUM_TOL:
                raise ProbabilitySumError(t.names[v], total)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p.probability for p in self.productions], dtype=float)

    @property
    def parents(self) -> np.ndarray:
        return np.array([p.parent for p in self.productions], dtype=np.int64)

    @property
    def structure_key(self) -> tuple:
        """Hashable description of the production structure (no probabilities)."""
        return (self.types, tuple(p.key for p in self.productions))

    def productions_of(self, v: int) -> list[int]:
        """Indices into ``productions`` of the productions of parent ``v``."""
        return [k for k, p in enumerate(self.productions) if p.parent == v]

    def index_of(self, parent: int, offspring: Sequence[int]) -> int:
        key = (parent, tuple(offspring))
        for k, p in enumerate(self.productions):
            if p.key == key:
                return k
        raise KeyError(key)

    def find(self, text: str) -> int:
        """Index of a production written as ``"T1 -> T1 T2"``."""
        lhs, _, rhs = text.partition("->")
        parent = self.types.index(lhs.strip())
        return self.index_of(parent, self.types.vector(rhs.split()))

    def with_probabilities(self, probs: Sequence[float]) -> OffspringModel:
        probs = list(probs)
        if len(probs) != len(self.productions):
            raise ModelError("probability vector has the wrong length")
        prods = tuple(
            Production(p.parent, p.offspring, float(q))
            for p, q in zip(self.productions, probs)
        )
        return OffspringModel(self.types, prods)

    def labels(self) -> list[str]:
        return [p.label(self.types) for p in self.productions]

    def distribution(self, v: int | str) -> dict[str, float]:
        if isinstance(v, str):
            v = self.types.index(v)
        return {
            self.productions[k].label(self.types): self.productions[k].probability
            for k in self.productions_of(v)
        }


def _normalized_per_parent(model: OffspringModel, weights: np.ndarray) -> np.ndarray:
    probs = np.zeros(len(model.productions))
    for v in range(model.types.m):
        idx = model.productions_of(v)
        if not idx:
            raise ModelError(f"nonterminal {model.types.names[v]} has no productions")
        w = weights[idx]
        probs[idx] = w / w.sum()
    return probs


def uniform_init(structure: OffspringModel) -> OffspringModel:
    """Give each parent's productions equal probability."""
    return structure.with_probabilities(
        _normalized_per_parent(structure, np.ones(len(structure.productions)))
    )


def random_init(structure: OffspringModel, seed: int) -> OffspringModel:
    """Positive random probabilities per parent, drawn from a flat Dirichlet."""
    rng = np.random.default_rng(seed)
    w = rng.gamma(1.0, size=len(structure.productions))
    # gamma(1) can in principle return 0.0; keep everything strictly positive
    w = np.maximum(w, np.finfo(float).tiny)
    return structure.with_probabilities(_normalized_per_parent(structure, w))


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0]


def _parse_header(line: str, lineno: int, keyword: str) -> list[str]:
    body = _strip_comment(line)
    head, sep, rest = body.partition(":")
    if not sep or head.strip() != keyword:
        col = len(body) - len(body.lstrip()) + 1
        raise ModelSyntaxError(f"expected '{keyword}:' header", lineno, col)
    return rest.split()


def _parse(text: str, need_probabilities: bool) -> OffspringModel:
    lines = [(i + 1, raw) for i, raw in enumerate(text.splitlines())]
    content = [(n, raw) for n, raw in lines if _strip_comment(raw).strip()]
    if len(content) < 2:
        n = content[0][0] if content else max(len(lines), 1)
        raise ModelSyntaxError("missing 'nonterminals:' / 'terminals:' headers", n, 1)

    (n1, l1), (n2, l2) = content[0], content[1]
    nts = _parse_header(l1, n1, "nonterminals")
    ts = _parse_header(l2, n2, "terminals")
    if not nts:
        raise ModelSyntaxError("at least one nonterminal is required", n1, 1)
    try:
        types = TypeTable(tuple(nts + ts), len(nts))
    except ModelError as exc:
        raise ModelSyntaxError(str(exc), n1, 1) from None

    prods = []
    seen = {}
    for lineno, raw in content[2:]:
        body = _strip_comment(raw)
        lhs, arrow, rhs = body.partition("->")
        if not arrow:
            col = len(body) - len(body.lstrip()) + 1
            raise ModelSyntaxError("expected 'PARENT -> CHILD ... : PROB'", lineno, col)
        kids_text, colon, prob_text = rhs.partition(":")
        parent_name = lhs.strip()
        if not parent_name or len(parent_name.split()) != 1:
            raise ModelSyntaxError("expected exactly one parent type", lineno, 1)
        try:
            parent = types.index(parent_name)
            offspring = types.vector(kids_text.split())
        except UnknownTypeError as exc:
            raise UnknownTypeError(f"line {lineno}: {exc}") from None
        if types.is_terminal(parent):
            raise TerminalParentError(
                f"line {lineno}: terminal type {parent_name} cannot have productions"
            )
        if not kids_text.split():
            col = body.index("->") + 3
            raise ModelSyntaxError("production has no offspring", lineno, col)
        if colon:
            try:
                prob = float(prob_text.strip())
            except ValueError:
                col = len(lhs) + 2 + len(kids_text) + 2
                raise ModelSyntaxError(
                    f"bad probability {prob_text.strip()!r}", lineno, col
                ) from None
        elif need_probabilities:
            raise ModelSyntaxError("missing ': PROBABILITY'", lineno, len(body.rstrip()) + 1)
        else:
            prob = 0.0
        key = (parent, offspring)
        if key in seen:
            raise DuplicateProductionError(
                f"line {lineno}: duplicate production (first on line {seen[key]})"
            )
        seen[key] = lineno
        prods.append(Production(parent, offspring, prob))

    if not need_probabilities:
        # structure only: validate shape, then assign uniform probabilities
        counts = {}
        for p in prods:
            counts[p.parent] = counts.get(p.parent, 0) + 1
        prods = [Production(p.parent, p.offspring, 1.0 / counts[p.parent]) for p in prods]
    return OffspringModel(types, tuple(prods))


def parse_model(text: str) -> OffspringModel:
    """Parse and validate a model file."""
    return _parse(text, need_probabilities=True)


def parse_structure(text: str) -> OffspringModel:
    """Parse a model file for its structure only.

    Probabilities may be omitted and are ignored when present; the returned
    model carries uniform probabilities.
    """
    return _parse(text, need_probabilities=False)


def serialize_model(model: OffspringModel) -> str:
    t = model.types
    out = [
        "nonterminals: " + " ".join(t.nonterminals),
        ("terminals: " + " ".join(t.terminals)).rstrip(),
    ]
    for p in model.productions:
        kids = " ".join(t.names[i] for i in p.children())
        out.append(f"{t.names[p.parent]} -> {kids} : {p.probability:.17g}")
    return "\n".join(out) + "\n"


EXAMPLE_MODEL_TEXT = """\
nonterminals: T1 T2
terminals: T1t T2t
T1 -> T1 T1 : 0.25
T1 -> T1 T2 : 0.25
T1 -> T1 : 0.25
T1 -> T1t : 0.25
T2 -> T2 T2 : 0.3333333333333333
T2 -> T2 : 0.3333333333333333
T2 -> T2t : 0.3333333333333334
"""

# Model used to generate data for the simulation study: no survival emissions,
# so observed generations contain terminal particles only.
STUDY_TRUTH_TEXT = """\
nonterminals: T1 T2
terminals: T1t T2t
T1 -> T1 T1 : 0.33333333333333331
T1 -> T1 T2 : 0.33333333333333331
T1 -> T1t : 0.33333333333333337
T2 -> T2 T2 : 0.5
T2 -> T2t : 0.5
"""


def example_model() -> OffspringModel:
    """The two-type worked example with uniform starting probabilities."""
    return uniform_init(parse_structure(EXAMPLE_MODEL_TEXT))


def study_truth_model() -> OffspringModel:
    return parse_model(STUDY_TRUTH_TEXT)
