"""The built-in two-type example: model, observation and hand-derived values.

Type order is (T1, T2, T1t, T2t); the observation is one T1 ancestor giving
one surviving T1, one T1t and one T2t.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as F

from .em import EMConfig, fit
from .inside_outside import (
    MULTISET,
    expected_counts,
    format_tables,
    inner_probabilities,
    outer_probabilities,
)
from .model import example_model
from .simulator import Observation

OBSERVATION = Observation(0, (1, 0, 1, 1))

ALPHA = {
    ((1, 0, 0, 0), "T1"): F(1, 4),
    ((0, 0, 1, 0), "T1"): F(1, 4),
    ((0, 1, 0, 0), "T2"): F(1, 3),
    ((0, 0, 0, 1), "T2"): F(1, 3),
    ((1, 0, 1, 0), "T1"): F(1, 64),
    ((1, 0, 0, 1), "T1"): F(1, 48),
    ((0, 0, 1, 1), "T1"): F(1, 48),
    ((1, 0, 1, 0), "T2"): F(0),
    ((1, 0, 0, 1), "T2"): F(0),
    ((0, 0, 1, 1), "T2"): F(0),
    ((1, 0, 1, 1), "T1"): F(1, 256),
}

BETA = {
    ((1, 0, 1, 1), "T1"): F(1),
    ((1, 0, 1, 1), "T2"): F(0),
    ((1, 0, 1, 0), "T1"): F(1, 12),
    ((1, 0, 0, 1), "T1"): F(1, 16),
    ((0, 0, 1, 1), "T1"): F(1, 16),
    ((1, 0, 1, 0), "T2"): F(0),
    ((1, 0, 0, 1), "T2"): F(1, 16),
    ((0, 0, 1, 1), "T2"): F(1, 16),
    ((1, 0, 0, 0), "T1"): F(1, 64),
    ((0, 0, 1, 0), "T1"): F(1, 64),
    ((0, 0, 0, 1), "T1"): F(3, 256),
    ((1, 0, 0, 0), "T2"): F(5, 288),
    ((0, 0, 1, 0), "T2"): F(5, 288),
    # 3/256, not 1/256: the three T1 -> {T1, T2} parents each contribute
    # 1/256, and E c(T2) = E c(T2 -> T2t) = 1 needs the full sum
    ((0, 0, 0, 1), "T2"): F(3, 256),
}

TYPE_COUNTS = {"T1": F(4), "T2": F(1)}

PRODUCTION_COUNTS = {
    "T1 -> T1 T1": F(1),
    "T1 -> T1 T2": F(1),
    "T1 -> T1t": F(1),
    "T1 -> T1": F(1),
    "T2 -> T2 T2": F(0),
    "T2 -> T2": F(0),
    "T2 -> T2t": F(1),
}

ESTIMATES = {
    "T1 -> T1 T1": F(1, 4),
    "T1 -> T1 T2": F(1, 4),
    "T1 -> T1t": F(1, 4),
    "T1 -> T1": F(1, 4),
    "T2 -> T2 T2": F(0),
    "T2 -> T2": F(0),
    "T2 -> T2t": F(1),
}

ITERATIONS = 2
TOLERANCE = 1e-12


@dataclass
class Check:
    name: str
    expected: float
    actual: float

    @property
    def ok(self) -> bool:
        return abs(self.expected - self.actual) <= TOLERANCE


@dataclass
class ExampleRun:
    report: str
    values: dict  # name -> computed value
    checks: list[Check]

    @property
    def mismatches(self) -> list[Check]:
        return [c for c in self.checks if not c.ok]


def _vec(v) -> str:
    return "(" + ",".join(map(str, v)) + ")"


def run_example(mode: str = MULTISET) -> ExampleRun:
    """Compute every table of the example; checks are only built in multiset mode."""
    model = example_model()
    obs = OBSERVATION
    inner, lik = inner_probabilities(model, obs, mode)
    outer = outer_probabilities(model, obs, inner, mode)
    counts = expected_counts(model, obs, inner, outer, mode)
    result = fit(model, [obs], EMConfig(mode=mode))

    values = {}
    for (vec, t) in ALPHA:
        values[f"alpha{_vec(vec)}[{t}]"] = inner[vec, t]
    for (vec, t) in BETA:
        values[f"beta{_vec(vec)}[{t}]"] = outer[vec, t]
    for t in TYPE_COUNTS:
        values[f"E c({t})"] = float(counts.type_expectations[model.types.index(t)])
    for p in PRODUCTION_COUNTS:
        values[f"E c({p})"] = float(counts.production_expectations[model.find(p)])
    for p in ESTIMATES:
        values[f"p^({p})"] = result.model.productions[model.find(p)].probability
    values["iterations"] = float(result.iterations)
    values["converged"] = float(result.converged)

    lines = [f"mode: {mode}", f"observation: root T1, X = {_vec(obs.x)}",
             f"likelihood: {lik:.17g}", "", format_tables(inner, outer).rstrip("\n"), ""]
    lines.append("expected counts")
    for t in TYPE_COUNTS:
        lines.append(f"  E c({t}) = {values[f'E c({t})']:.17g}")
    for p in PRODUCTION_COUNTS:
        lines.append(f"  E c({p}) = {values[f'E c({p})']:.17g}")
    lines.append("")
    lines.append(f"estimates after {result.iterations} iterations (converged: {result.converged})")
    for t in ("T1", "T2"):
        for label, prob in result.model.distribution(t).items():
            lines.append(f"  {label}: {prob:.17g}")

    checks = []
    if mode == MULTISET:
        expected = {}
        expected.update({f"alpha{_vec(v)}[{t}]": x for (v, t), x in ALPHA.items()})
        expected.update({f"beta{_vec(v)}[{t}]": x for (v, t), x in BETA.items()})
        expected.update({f"E c({t})": x for t, x in TYPE_COUNTS.items()})
        expected.update({f"E c({p})": x for p, x in PRODUCTION_COUNTS.items()})
        expected.update({f"p^({p})": x for p, x in ESTIMATES.items()})
        expected["iterations"] = ITERATIONS
        expected["converged"] = 1
        checks = [Check(k, float(x), values[k]) for k, x in expected.items()]
    return ExampleRun("\n".join(lines) + "\n", values, checks)
