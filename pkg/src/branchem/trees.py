"""Derivation trees, occurrence counts and the complete-data estimator."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .model import ModelError, OffspringModel, Production, TypeTable


class TreeError(ValueError):
    pass


class TreeSyntaxError(TreeError):
    def __init__(self, message: str, position: int):
        super().__init__(f"position {position}: {message}")
        self.position = position


def _key_of(node: DerivationTree) -> tuple:
    return node.key


class UndefinedDistributionError(ValueError):
    def __init__(self, type_name: str):
        super().__init__(f"type {type_name} never occurs as a parent; its estimate is undefined")
        self.type_name = type_name


@dataclass(frozen=True, eq=False, slots=True)
class DerivationTree:
    """A node of a derivation tree.

    Leaves have no children.  An internal node applied the production whose
    offspring vector is the multiset of its children's types.  Children are
    stored in canonical order so that equal unordered trees compare equal.
    """

    type: int
    children: tuple[DerivationTree, ...] = ()
    # canonical nested-tuple form and its hash, computed once at construction
    key: tuple = field(init=False, repr=False)
    _hash: int = field(init=False, repr=False)

    def __post_init__(self):
        kids = tuple(self.children)
        if len(kids) > 1:
            kids = tuple(sorted(kids, key=_key_of))
        elif len(kids) == 1 and kids[0].children:
            raise TreeError("unary node must have a leaf child (interior unary chains are not allowed)")
        key = (self.type, tuple(c.key for c in kids))
        object.__setattr__(self, "children", kids)
        object.__setattr__(self, "key", key)
        # built from the children's hashes; hashing ``key`` directly would walk the subtree
        object.__setattr__(self, "_hash", hash((self.type, tuple(c._hash for c in kids))))

    def __eq__(self, other):
        if not isinstance(other, DerivationTree):
            return NotImplemented
        return self is other or (self._hash == other._hash and self.key == other.key)

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self.key < other.key

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def offspring(self, d: int) -> tuple[int, ...] | None:
        """Offspring vector of the applied production, None for a leaf."""
        if not self.children:
            return None
        counts = [0] * d
        for c in self.children:
            counts[c.type] += 1
        return tuple(counts)

    def nodes(self) -> Iterable[DerivationTree]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


def leaf(t: int) -> DerivationTree:
    return DerivationTree(t)


@dataclass
class TreeCounts:
    type_counts: Counter = field(default_factory=Counter)
    production_counts: Counter = field(default_factory=Counter)

    def __iadd__(self, other: TreeCounts):
        self.type_counts.update(other.type_counts)
        self.production_counts.update(other.production_counts)
        return self


def yield_vector(tree: DerivationTree, d: int) -> tuple[int, ...]:
    counts = [0] * d
    for node in tree.nodes():
        if node.is_leaf:
            counts[node.type] += 1
    return tuple(counts)


def count_occurrences(tree: DerivationTree, d: int) -> TreeCounts:
    """Count internal nodes per type and per applied production.

    Production keys are ``(parent, offspring_vector)`` pairs, the same keys
    as ``Production.key``.
    """
    out = TreeCounts()
    for node in tree.nodes():
        if node.children:
            out.type_counts[node.type] += 1
            out.production_counts[(node.type, node.offspring(d))] += 1
    return out


def validate_tree(tree: DerivationTree, model: OffspringModel) -> None:
    """Check every applied production exists in ``model``.

    Bare nonterminal leaves are only allowed as the emitted child of a unary
    node (or as a lone root); elsewhere they have no derivation.
    """
    t = model.types
    keys = {p.key for p in model.productions}

    def walk(node: DerivationTree, emitted: bool):
        if node.is_leaf:
            if not t.is_terminal(node.type) and not emitted:
                raise TreeError(
                    f"nonterminal leaf {t.names[node.type]} is not the child of an emission"
                )
            return
        if t.is_terminal(node.type):
            raise TreeError(f"terminal {t.names[node.type]} cannot have children")
        key = (node.type, node.offspring(t.d))
        if key not in keys:
            kids = " ".join(t.names[c.type] for c in node.children)
            raise TreeError(f"no production {t.names[node.type]} -> {kids} in the model")
        unary = len(node.children) == 1
        for c in node.children:
            walk(c, unary)

    walk(tree, emitted=True)


def complete_data_mle(trees: Sequence[DerivationTree], structure: OffspringModel) -> OffspringModel:
    """Ratio estimator c(v -> A) / c(v) from fully observed trees.

    Unobserved productions get probability 0.  A nonterminal that never
    occurs as a parent raises :class:`UndefinedDistributionError`.
    """
    if not trees:
        raise ValueError("need at least one tree")
    t = structure.types
    total = TreeCounts()
    for tree in trees:
        total += count_occurrences(tree, t.d)
    known = {p.key for p in structure.productions}
    for key in total.production_counts:
        if key not in known:
            parent, offspring = key
            raise ModelError(
                f"tree uses {Production(parent, offspring).label(t)}, which is not in the structure"
            )
    for v in range(t.m):
        if total.type_counts[v] == 0:
            raise UndefinedDistributionError(t.names[v])
    probs = [
        float(Fraction(total.production_counts[p.key], total.type_counts[p.parent]))
        for p in structure.productions
    ]
    return structure.with_probabilities(probs)


def serialize_tree(tree: DerivationTree, types: TypeTable) -> str:
    names = types.names
    parts: list[str] = []

    def emit(node: DerivationTree):
        parts.append(names[node.type])
        if node.children:
            parts.append("(")
            for i, c in enumerate(node.children):
                if i:
                    parts.append(" ")
                emit(c)
            parts.append(")")

    emit(tree)
    return "".join(parts)


def parse_tree(text: str, types: TypeTable, model: OffspringModel | None = None) -> DerivationTree:
    """Parse ``Name`` / ``Name(child child ...)``; validate against ``model`` if given."""
    pos = 0
    n = len(text)

    def skip_ws():
        nonlocal pos
        while pos < n and text[pos].isspace():
            pos += 1

    def name() -> int:
        nonlocal pos
        start = pos
        while pos < n and not text[pos].isspace() and text[pos] not in "()":
            pos += 1
        if pos == start:
            raise TreeSyntaxError("expected a type name", start)
        try:
            return types.index(text[start:pos])
        except ModelError as exc:
            raise TreeSyntaxError(str(exc), start) from None

    def node() -> DerivationTree:
        nonlocal pos
        skip_ws()
        start = pos
        t = name()
        skip_ws()
        if pos < n and text[pos] == "(":
            pos += 1
            kids = []
            while True:
                skip_ws()
                if pos >= n:
                    raise TreeSyntaxError("unclosed '('", pos)
                if text[pos] == ")":
                    pos += 1
                    break
                kids.append(node())
            if not kids:
                raise TreeSyntaxError("empty child list", start)
            try:
                return DerivationTree(t, tuple(kids))
            except TreeError as exc:
                raise TreeSyntaxError(str(exc), start) from None
        return DerivationTree(t)

    tree = node()
    skip_ws()
    if pos != n:
        raise TreeSyntaxError("trailing characters", pos)
    if model is not None:
        validate_tree(tree, model)
    return tree


def read_trees(text: str, types: TypeTable, model: OffspringModel | None = None) -> list[DerivationTree]:
    return [parse_tree(line, types, model) for line in text.splitlines() if line.strip()]


def write_trees(trees: Iterable[DerivationTree], types: TypeTable) -> str:
    return "".join(serialize_tree(t, types) + "\n" for t in trees)
