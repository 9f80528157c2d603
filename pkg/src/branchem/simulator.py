"""Seeded sampling of derivation trees and generation observations."""

from __future__ import annotations

import bisect
import csv
import gc
import io
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .model import OffspringModel, TypeTable
from .trees import DerivationTree, yield_vector

MAX_CONSECUTIVE_REJECTIONS = 1_000_000

# Harness defaults for the simulation study; not taken from any published run.
SMALL_TREES = (3, 12)
LARGE_TREES = (13, 40)


class SimulationConfigError(ValueError):
    pass


class BoundsInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    root: int
    seed: int
    count: int
    max_depth: int = 64
    size_bounds: tuple[int, int] | None = None

    def __post_init__(self):
        if self.max_depth < 1:
            raise SimulationConfigError("max_depth must be >= 1")
        if self.count < 0:
            raise SimulationConfigError("count must be >= 0")
        if self.seed < 0:
            raise SimulationConfigError("seed must be unsigned")
        if self.size_bounds is not None:
            lo, hi = self.size_bounds
            if not 1 <= lo <= hi:
                raise SimulationConfigError(f"bad size bounds {self.size_bounds}")


@dataclass(frozen=True)
class Observation:
    root: int
    x: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(int(c) for c in self.x))
        if any(c < 0 for c in self.x) or sum(self.x) < 1:
            raise ValueError(f"observation needs nonnegative counts with total >= 1, got {self.x}")

    @property
    def total(self) -> int:
        return sum(self.x)


class _Sampler:
    """Per-model lookup tables for drawing productions."""

    def __init__(self, model: OffspringModel):
        self.model = model
        t = model.types
        # leaves are immutable, so one instance per type is shared by every tree
        self.leaves = [DerivationTree(i) for i in range(t.d)]
        self.children = [p.children() for p in model.productions]
        self.cum = []
        self.idx = []
        self.emit_cum = []
        self.emit_idx = []
        for v in range(t.m):
            idx = model.productions_of(v)
            probs = np.array([model.productions[k].probability for k in idx])
            self.idx.append(idx)
            self.cum.append(list(np.cumsum(probs) / probs.sum()))
            e_idx = [k for k in idx if model.productions[k].is_emission]
            e_probs = np.array([model.productions[k].probability for k in e_idx])
            self.emit_idx.append(e_idx)
            total = e_probs.sum() if e_idx else 0.0
            self.emit_cum.append(list(np.cumsum(e_probs) / total) if total > 0 else None)

    def draw(self, rng: _Uniforms, v: int, forced: bool) -> int:
        if forced:
            cum, idx = self.emit_cum[v], self.emit_idx[v]
            if cum is None:
                raise SimulationConfigError(
                    f"a {self.model.types.names[v]} node reached the depth cap, but "
                    f"{self.model.types.names[v]} has no emission with positive probability"
                )
        else:
            cum, idx = self.cum[v], self.idx[v]
        j = bisect.bisect_right(cum, rng.next())
        # cumsum may end a hair below 1
        return idx[min(j, len(idx) - 1)]


class _Uniforms:
    """Buffered U(0,1) stream for one tree, seeded by (seed, draw index)."""

    def __init__(self, seed: int, draw: int, chunk: int = 256):
        self._gen = np.random.default_rng([seed, draw])
        self._chunk = chunk
        self._buf: list[float] = []
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(self._chunk).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def _tree_rng(seed: int, draw: int) -> _Uniforms:
    return _Uniforms(seed, draw)


def _simulate(sampler: _Sampler, root: int, max_depth: int, rng, max_leaves: int | None):
    """Grow a tree; returns None as soon as it has more than ``max_leaves`` leaves."""
    t = sampler.model.types
    # frames: [type, depth, child types still to build, built children]
    n_leaves = 0
    root_frame = None
    stack = []

    def open_node(v: int, depth: int):
        nonlocal n_leaves
        k = sampler.draw(rng, v, forced=depth >= max_depth)
        kids = sampler.children[k]
        if len(kids) == 1:
            n_leaves += 1
            return DerivationTree(v, (sampler.leaves[kids[0]],))
        return [v, depth, list(kids), []]

    node = open_node(root, 1)
    if isinstance(node, DerivationTree):
        return node
    stack.append(node)
    while stack:
        if max_leaves is not None and n_leaves > max_leaves:
            return None
        frame = stack[-1]
        if frame[2]:
            c = frame[2].pop(0)
            if t.is_terminal(c):
                n_leaves += 1
                frame[3].append(sampler.leaves[c])
            else:
                child = open_node(c, frame[1] + 1)
                if isinstance(child, DerivationTree):
                    frame[3].append(child)
                else:
                    stack.append(child)
            continue
        stack.pop()
        done = DerivationTree(frame[0], tuple(frame[3]))
        if stack:
            stack[-1][3].append(done)
        else:
            root_frame = done
    if max_leaves is not None and n_leaves > max_leaves:
        return None
    return root_frame


def _check(model: OffspringModel, cfg: SimConfig) -> _Sampler:
    if not 0 <= cfg.root < model.types.m:
        raise SimulationConfigError("root must be a nonterminal")
    return _Sampler(model)


def simulate_tree(model: OffspringModel, cfg: SimConfig, draw: int) -> DerivationTree:
    """Draw tree number ``draw``; the result depends only on (model, cfg.seed, draw).

    Nodes at depth ``cfg.max_depth`` (the root has depth 1) choose among the
    emission productions only, renormalized.
    """
    sampler = _check(model, cfg)
    return _simulate(sampler, cfg.root, cfg.max_depth, _tree_rng(cfg.seed, draw), None)


def simulate_sample(model: OffspringModel, cfg: SimConfig) -> tuple[list[DerivationTree], list[Observation]]:
    """Draw ``cfg.count`` trees, rejecting those outside ``cfg.size_bounds``."""
    sampler = _check(model, cfg)
    with _gc_paused():
        return _sample(sampler, model.types.d, cfg)


@contextmanager
def _gc_paused():
    # Trees hold no reference cycles.  With many live nodes the cyclic
    # collector's full passes otherwise dominate the run time.
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _sample(sampler: _Sampler, d: int, cfg: SimConfig):
    lo, hi = cfg.size_bounds if cfg.size_bounds else (1, None)
    trees: list[DerivationTree] = []
    obs: list[Observation] = []
    draw = 0
    rejected = 0
    while len(trees) < cfg.count:
        tree = _simulate(sampler, cfg.root, cfg.max_depth, _tree_rng(cfg.seed, draw), hi)
        draw += 1
        x = yield_vector(tree, d) if tree is not None else None
        if x is None or sum(x) < lo:
            rejected += 1
            if rejected >= MAX_CONSECUTIVE_REJECTIONS:
                raise BoundsInfeasibleError(
                    f"{rejected} consecutive trees fell outside size bounds {cfg.size_bounds}"
                )
            continue
        rejected = 0
        trees.append(tree)
        obs.append(Observation(cfg.root, x))
    return trees, obs


def write_observations(observations, types: TypeTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["root", *types.names])
    for o in observations:
        w.writerow([types.names[o.root], *o.x])
    return buf.getvalue()


def read_observations(text: str, types: TypeTable) -> list[Observation]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("observations file is empty (missing header)")
    header = [h.strip() for h in rows[0]]
    if header != ["root", *types.names]:
        raise ValueError(f"observations header {header} does not match types {list(types.names)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        root = types.index(row[0].strip())
        if types.is_terminal(root):
            raise ValueError(f"row {lineno}: root {row[0]} is terminal")
        try:
            x = tuple(int(c) for c in row[1:])
            out.append(Observation(root, x))
        except ValueError as exc:
            raise ValueError(f"row {lineno}: {exc}") from None
    return out
