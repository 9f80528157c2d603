import numpy as np
import pytest

from branchem.em import EMConfig, NoUsableObservationsError, em_step, fit, format_trace
from branchem.inside_outside import MULTISET, ORDERED, UnderivableObservationError
from branchem.model import example_model, parse_model, study_truth_model, uniform_init
from branchem.simulator import Observation, SimConfig, simulate_sample

MODEL = example_model()
X = Observation(0, (1, 0, 1, 1))


def test_example_step():
    new, loglik = em_step(MODEL, [X])
    assert loglik == pytest.approx(np.log(1 / 256))
    assert list(new.distribution("T1").values()) == pytest.approx([0.25] * 4, abs=1e-12)
    assert new.distribution("T2") == pytest.approx({"T2->T2t": 1.0, "T2->T2": 0.0, "T2->T2+T2": 0.0}, abs=1e-12)


def test_fixpoint_is_bit_identical():
    once, _ = em_step(MODEL, [X])
    twice, _ = em_step(once, [X])
    thrice, _ = em_step(twice, [X])
    assert np.array_equal(twice.probabilities, thrice.probabilities)


def test_example_converges_in_two():
    result = fit(MODEL, [X])
    assert result.converged and result.iterations == 2
    assert result.trace[0].params == tuple(MODEL.probabilities)


def test_deterministic_model_converges_in_one():
    m = parse_model(
        "nonterminals: T1 T2\nterminals: T1t T2t\n"
        "T1 -> T2 T1t : 1\nT1 -> T1t : 0\nT2 -> T2t : 1\nT2 -> T2 T2 : 0\n"
    )
    _, obs = simulate_sample(m, SimConfig(root=0, seed=4, count=5))
    result = fit(m, obs)
    assert result.converged and result.iterations == 1
    assert np.array_equal(result.model.probabilities, m.probabilities)


@pytest.mark.parametrize("mode", [MULTISET, ORDERED])
def test_loglik_nondecreasing(mode):
    truth = study_truth_model()
    _, obs = simulate_sample(truth, SimConfig(root=0, seed=31, count=20, size_bounds=(3, 12)))
    result = fit(uniform_init(truth), obs, EMConfig(mode=mode, max_iter=60))
    ll = [e.loglik for e in result.trace]
    assert all(b >= a - 1e-10 for a, b in zip(ll, ll[1:]))
    for e in result.trace:
        params = np.array(e.params)
        for v in range(truth.types.m):
            assert abs(params[truth.productions_of(v)].sum() - 1) < 1e-12


def test_zero_stays_zero():
    start = MODEL.with_probabilities([0.5, 0.0, 0.25, 0.25, 1 / 3, 1 / 3, 1 / 3])
    assert start.labels()[1] == "T1->T1"
    obs = [Observation(0, (0, 0, 2, 1)), Observation(0, (0, 0, 3, 0))]
    result = fit(start, obs, EMConfig(max_iter=20))
    assert all(e.params[1] == 0.0 for e in result.trace)
    assert result.model.probabilities[1] == 0.0


def test_duplicating_data_leaves_update_unchanged():
    obs = [Observation(0, (0, 0, 2, 1)), X]
    a, _ = em_step(MODEL, obs)
    b, _ = em_step(MODEL, obs * 3)
    assert np.allclose(a.probabilities, b.probabilities, atol=1e-14)


def test_absent_parent_keeps_distribution():
    obs = [Observation(0, (0, 0, 2, 0))]
    result = fit(MODEL, obs, EMConfig(max_iter=5))
    assert result.model.distribution("T2") == MODEL.distribution("T2")
    assert result.trace[0].stale_parents == ("T2",)


def test_abort_on_impossible():
    with pytest.raises(UnderivableObservationError) as info:
        fit(MODEL, [X, Observation(0, (0, 1, 0, 0))])
    assert info.value.index == 1


def test_skip_impossible():
    result = fit(MODEL, [Observation(0, (0, 1, 0, 0)), X], EMConfig(on_impossible="skip"))
    assert result.skipped_observations == [0]
    assert result.converged


def test_nothing_usable():
    with pytest.raises(NoUsableObservationsError):
        fit(MODEL, [Observation(0, (0, 1, 0, 0))], EMConfig(on_impossible="skip"))


def test_max_iter_reached():
    truth = study_truth_model()
    _, obs = simulate_sample(truth, SimConfig(root=0, seed=2, count=10, size_bounds=(3, 12)))
    result = fit(uniform_init(truth), obs, EMConfig(max_iter=2))
    assert not result.converged and result.iterations == 2


def test_config_validation():
    with pytest.raises(ValueError):
        EMConfig(mode="nope")
    with pytest.raises(ValueError):
        EMConfig(tol_loglik=0)
    with pytest.raises(ValueError):
        EMConfig(max_iter=0)


def test_trace_format():
    text = format_trace(fit(MODEL, [X]))
    lines = text.splitlines()
    assert lines[0].split("\t")[:3] == ["iter", "loglik", "T1->T1t"]
    assert len(lines) == 3
