import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchem.inside_outside import (
    MULTISET,
    ORDERED,
    ModeMismatchError,
    UnderivableObservationError,
    aggregate_counts,
    expected_counts,
    format_tables,
    inner_probabilities,
    likelihood,
    observation_counts,
    outer_probabilities,
)
from branchem.model import OffspringModel, Production, example_model
from branchem.oracle import oracle_expected_counts
from branchem.simulator import Observation
from helpers import random_instances, random_model, random_observation

MODEL = example_model()
X = Observation(0, (1, 0, 1, 1))


@pytest.fixture(scope="module")
def tables():
    inner, lik = inner_probabilities(MODEL, X, MULTISET)
    outer = outer_probabilities(MODEL, X, inner, MULTISET)
    return inner, outer, lik


@pytest.mark.parametrize("vec,t,value", [
    ((1, 0, 0, 0), "T1", 1 / 4),
    ((0, 0, 1, 0), "T1", 1 / 4),
    ((0, 1, 0, 0), "T2", 1 / 3),
    ((0, 0, 0, 1), "T2", 1 / 3),
    ((1, 0, 1, 0), "T1", 1 / 64),
    ((1, 0, 0, 1), "T1", 1 / 48),
    ((0, 0, 1, 1), "T1", 1 / 48),
    ((1, 0, 1, 0), "T2", 0.0),
    ((1, 0, 1, 1), "T1", 1 / 256),
])
def test_inner_example(tables, vec, t, value):
    assert tables[0][vec, t] == pytest.approx(value, abs=1e-15)


def test_likelihood_example(tables):
    assert tables[2] == pytest.approx(1 / 256, abs=1e-15)


@pytest.mark.parametrize("vec,t,value", [
    ((1, 0, 1, 1), "T1", 1.0),
    ((1, 0, 1, 1), "T2", 0.0),
    ((1, 0, 1, 0), "T1", 1 / 12),
    ((1, 0, 0, 1), "T1", 1 / 16),
    ((1, 0, 0, 0), "T1", 1 / 64),
    ((0, 0, 0, 1), "T1", 3 / 256),
    ((1, 0, 0, 0), "T2", 5 / 288),
])
def test_outer_example(tables, vec, t, value):
    assert tables[1][vec, t] == pytest.approx(value, abs=1e-15)


def test_outer_t2_emission_slot_matches_enumeration(tables):
    # Only alpha((0,0,0,1),T2) = 1/3 contributes to E c(T2), and enumeration gives
    # E c(T2) = 1 at P = 1/256, so beta there must be 3/256.
    oracle = oracle_expected_counts(MODEL, X, MULTISET)
    assert oracle.type_expectations[1] == pytest.approx(1.0, abs=1e-12)
    implied = oracle.type_expectations[1] * tables[2] / tables[0][(0, 0, 0, 1), "T2"]
    assert tables[1][(0, 0, 0, 1), "T2"] == pytest.approx(implied, abs=1e-15)
    assert implied == pytest.approx(3 / 256, abs=1e-15)


def test_expected_counts_example(tables):
    inner, outer, _ = tables
    c = expected_counts(MODEL, X, inner, outer, MULTISET)
    assert c.type_expectations == pytest.approx([4, 1], abs=1e-12)
    want = {"T1 -> T1 T1": 1, "T1 -> T1 T2": 1, "T1 -> T1t": 1, "T1 -> T1": 1,
            "T2 -> T2 T2": 0, "T2 -> T2": 0, "T2 -> T2t": 1}
    for label, value in want.items():
        assert c.production_expectations[MODEL.find(label)] == pytest.approx(value, abs=1e-12)


def test_unit_vectors_outside_x_use_emissions(tables):
    assert tables[0][(0, 1, 0, 0), "T2"] == pytest.approx(1 / 3)
    assert tables[0][(0, 0, 0, 1), "T1"] == 0.0


def test_mode_mismatch(tables):
    with pytest.raises(ModeMismatchError):
        outer_probabilities(MODEL, X, tables[0], ORDERED)


def test_underivable():
    # a lone T2 cannot come from a T1 ancestor: T1 has no emission to T2
    obs = Observation(0, (0, 1, 0, 0))
    assert likelihood(MODEL, obs) == 0.0
    with pytest.raises(UnderivableObservationError):
        observation_counts(MODEL, obs)


def test_aggregate_identity_and_doubling():
    one = observation_counts(MODEL, X)
    same = aggregate_counts([one])
    assert np.array_equal(same.production_expectations, one.production_expectations)
    two = aggregate_counts([one, one])
    assert np.allclose(two.production_expectations, 2 * one.production_expectations)
    assert two.log_likelihood == pytest.approx(2 * one.log_likelihood)
    assert two.n_observations == 2


def test_aggregate_sums_different_observations():
    other = Observation(0, (0, 0, 2, 1))
    a, b = observation_counts(MODEL, X), observation_counts(MODEL, other)
    both = aggregate_counts([a, b])
    assert np.allclose(both.type_expectations, a.type_expectations + b.type_expectations)
    assert np.allclose(both.production_expectations, a.production_expectations + b.production_expectations)


def test_format_tables(tables):
    text = format_tables(tables[0], tables[1])
    lines = text.splitlines()
    assert lines[0].split("\t") == ["kind", "type", "vector", "value"]
    assert any(line.startswith("alpha\tT1\t") for line in lines)


def test_modes_differ_for_repeated_offspring():
    # The only tree is T1(T1(T1t) T1(T1(T1t) T1(T1t))).  Its two root children
    # differ, so ordered mode counts both orders and multiset mode counts one.
    model = OffspringModel(
        MODEL.types,
        (Production(0, (2, 0, 0, 0), 0.5), Production(0, (0, 0, 1, 0), 0.5), Production(1, (0, 0, 0, 1), 1.0)),
    )
    obs = Observation(0, (0, 0, 3, 0))
    assert likelihood(model, obs, ORDERED) == pytest.approx(2 * 0.5**5)
    assert likelihood(model, obs, MULTISET) == pytest.approx(0.5**5)


@pytest.mark.parametrize("seed", range(5))
def test_ordered_matches_oracle_batch(seed):
    for model, obs in random_instances(1000 + seed, 12):
        dp = observation_counts(model, obs, ORDERED)
        ref = oracle_expected_counts(model, obs, ORDERED)
        assert dp.likelihood == pytest.approx(ref.likelihood, abs=1e-10)
        assert np.allclose(dp.type_expectations, ref.type_expectations, atol=1e-10, rtol=0)
        assert np.allclose(dp.production_expectations, ref.production_expectations, atol=1e-10, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ordered_counts_consistent(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    obs = random_observation(rng, model)
    c = observation_counts(model, obs, ORDERED)
    for v in range(model.types.m):
        assert c.production_expectations[model.productions_of(v)].sum() == pytest.approx(
            c.type_expectations[v], abs=1e-10)


def _without_repeats(model):
    keep = [p for p in model.productions if max(p.offspring) == 1]
    out = []
    for v in range(model.types.m):
        mine = [p for p in keep if p.parent == v]
        total = sum(p.probability for p in mine)
        out += [Production(p.parent, p.offspring, p.probability / total) for p in mine]
    return OffspringModel(model.types, tuple(out))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_modes_agree_without_repeated_offspring(seed):
    rng = np.random.default_rng(seed)
    model = _without_repeats(random_model(rng))
    obs = random_observation(rng, model)
    a, lik_a = inner_probabilities(model, obs, MULTISET)
    b, lik_b = inner_probabilities(model, obs, ORDERED)
    assert lik_a == lik_b
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(outer_probabilities(model, obs, a, MULTISET).values,
                          outer_probabilities(model, obs, b, ORDERED).values)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_multiset_never_exceeds_ordered(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    obs = random_observation(rng, model)
    assert likelihood(model, obs, MULTISET) <= likelihood(model, obs, ORDERED) * (1 + 1e-12)


def test_log_likelihood_is_log_of_likelihood():
    c = observation_counts(MODEL, X)
    assert c.log_likelihood == pytest.approx(math.log(1 / 256))
