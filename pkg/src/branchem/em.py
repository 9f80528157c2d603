"""EM re-estimation of offspring probabilities from generation observations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inside_outside import (
    MODES,
    MULTISET,
    ExpectedCounts,
    UnderivableObservationError,
    aggregate_counts,
    likelihood,
    observation_counts,
)
from .model import OffspringModel
from .simulator import Observation

log = logging.getLogger(__name__)

ABORT = "abort"
SKIP = "skip"


@dataclass(frozen=True)
class EMConfig:
    mode: str = MULTISET
    tol_loglik: float = 1e-8
    tol_param: float = 1e-8
    max_iter: int = 200
    on_impossible: str = ABORT

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown counting mode {self.mode!r}")
        if not (self.tol_loglik > 0 and self.tol_param > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.on_impossible not in (ABORT, SKIP):
            raise ValueError(f"on_impossible must be {ABORT!r} or {SKIP!r}")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    loglik: float  # total log-likelihood of ``params``
    params: tuple[float, ...]  # the model the E-step was run on
    stale_parents: tuple[str, ...] = ()


@dataclass
class EMResult:
    model: OffspringModel
    trace: list[TraceEntry]
    converged: bool
    iterations: int
    skipped_observations: list[int] = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.trace[-1].loglik if self.trace else float("nan")


class NoUsableObservationsError(ValueError):
    pass


def _e_step(model: OffspringModel, observations: Sequence[Observation], mode: str) -> ExpectedCounts:
    probs = model.probabilities
    per_obs = []
    for i, obs in enumerate(observations):
        try:
            per_obs.append(observation_counts(model, obs, mode, probs))
        except UnderivableObservationError:
            raise UnderivableObservationError(obs, i) from None
    return aggregate_counts(per_obs)


def _m_step(model: OffspringModel, counts: ExpectedCounts) -> tuple[OffspringModel, list[str]]:
    old = model.probabilities
    new = old.copy()
    stale = []
    for v in range(model.types.m):
        idx = model.productions_of(v)
        e = counts.production_expectations[idx]
        total = e.sum()
        if total > 0:
            new[idx] = e / total
        else:
            stale.append(model.types.names[v])
    return model.with_probabilities(new), stale


def em_step(model: OffspringModel, observations: Sequence[Observation], mode: str = MULTISET):
    """One EM update.  Returns ``(new_model, loglik)`` with loglik of the *input* model."""
    counts = _e_step(model, observations, mode)
    new, _ = _m_step(model, counts)
    return new, counts.log_likelihood


def fit(init: OffspringModel, observations: Sequence[Observation], cfg: EMConfig = EMConfig()) -> EMResult:
    """Iterate EM until both the log-likelihood gain and the largest parameter
    change drop below their tolerances, or ``cfg.max_iter`` is reached."""
    observations = list(observations)
    skipped = []
    usable = []
    for i, obs in enumerate(observations):
        if likelihood(init, obs, cfg.mode) > 0:
            usable.append(obs)
        elif cfg.on_impossible == SKIP:
            log.warning("skipping observation %d %s: impossible under the initial model", i, obs.x)
            skipped.append(i)
        else:
            raise UnderivableObservationError(obs, i)
    if not usable:
        raise NoUsableObservationsError("no derivable observations")

    model = init
    counts = _e_step(model, usable, cfg.mode)
    trace: list[TraceEntry] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        new_model, stale = _m_step(model, counts)
        if stale:
            log.warning("iteration %d: no expected occurrences of %s; kept previous distribution", it, stale)
        new_counts = _e_step(new_model, usable, cfg.mode)
        trace.append(TraceEntry(it, counts.log_likelihood, tuple(model.probabilities), tuple(stale)))
        gain = new_counts.log_likelihood - counts.log_likelihood
        change = float(np.max(np.abs(new_model.probabilities - model.probabilities)))
        model, counts = new_model, new_counts
        if abs(gain) < cfg.tol_loglik and change < cfg.tol_param:
            converged = True
            break
    return EMResult(model, trace, converged, it, skipped)


def format_trace(result: EMResult) -> str:
    """TSV: ``iter loglik <one column per production>``."""
    labels = result.model.labels()
    lines = ["\t".join(["iter", "loglik", *labels])]
    for e in result.trace:
        lines.append("\t".join([str(e.iteration), f"{e.loglik:.17g}", *(f"{p:.17g}" for p in e.params)]))
    return "\n".join(lines) + "\n"
