import numpy as np
import pytest

from branchem.model import (
    EXAMPLE_MODEL_TEXT,
    DuplicateProductionError,
    ModelSyntaxError,
    ProbabilitySumError,
    TerminalParentError,
    UnknownTypeError,
    example_model,
    parse_model,
    parse_structure,
    random_init,
    serialize_model,
    uniform_init,
)

HEAD = "nonterminals: T1 T2\nterminals: T1t T2t\n"


def test_example_model_shape():
    m = parse_model(EXAMPLE_MODEL_TEXT)
    assert m.types.d == 4
    assert m.types.m == 2
    assert len(m.productions) == 7
    assert m.types.nonterminals == ("T1", "T2")
    assert m.types.terminals == ("T1t", "T2t")


def test_productions_in_canonical_order():
    m = parse_model(EXAMPLE_MODEL_TEXT)
    assert m.labels() == ["T1->T1t", "T1->T1", "T1->T1+T2", "T1->T1+T1", "T2->T2t", "T2->T2", "T2->T2+T2"]


def test_offspring_order_on_a_line_is_irrelevant():
    a = parse_model(HEAD + "T1 -> T2 T1 : 0.5\nT1 -> T1t : 0.5\nT2 -> T2t : 1\n")
    b = parse_model(HEAD + "T1 -> T1t : 0.5\nT1 -> T1 T2 : 0.5\nT2 -> T2t : 1\n")
    assert serialize_model(a) == serialize_model(b)


def test_comments_and_blank_lines():
    text = "# model\n\n" + HEAD + "T1 -> T1t : 1  # only one\n\nT2 -> T2t : 1\n"
    assert len(parse_model(text).productions) == 2


@pytest.mark.parametrize("text", ["", "   \n# nothing\n"])
def test_empty_text_is_syntax_error(text):
    with pytest.raises(ModelSyntaxError):
        parse_model(text)


def test_probability_sum_names_the_type():
    with pytest.raises(ProbabilitySumError) as info:
        parse_model(HEAD + "T1 -> T1t : 0.25\nT1 -> T1 T2 : 0.25\nT2 -> T2t : 1\n")
    assert "T1" in str(info.value)
    assert info.value.type_name == "T1"


def test_unknown_type_reports_line():
    with pytest.raises(UnknownTypeError, match="line 3"):
        parse_model(HEAD + "T1 -> T3 : 1\nT2 -> T2t : 1\n")


def test_duplicate_production():
    with pytest.raises(DuplicateProductionError):
        parse_model(HEAD + "T1 -> T1 T2 : 0.5\nT1 -> T2 T1 : 0.5\nT2 -> T2t : 1\n")


def test_terminal_parent_rejected():
    with pytest.raises(TerminalParentError):
        parse_model(HEAD + "T1 -> T1t : 1\nT2 -> T2t : 1\nT1t -> T1 : 1\n")


def test_missing_probability_is_a_syntax_error_with_position():
    with pytest.raises(ModelSyntaxError) as info:
        parse_model(HEAD + "T1 -> T1t\nT2 -> T2t : 1\n")
    assert info.value.line == 3


def test_nonterminal_without_productions():
    with pytest.raises(Exception, match="T2"):
        parse_model(HEAD + "T1 -> T1t : 1\n")


def test_round_trip():
    m = parse_model(EXAMPLE_MODEL_TEXT)
    text = serialize_model(m)
    assert serialize_model(parse_model(text)) == text
    assert np.array_equal(parse_model(text).probabilities, m.probabilities)


def test_one_third_survives_round_trip_bit_exactly():
    m = parse_model(HEAD + f"T1 -> T1t : {1/3!r}\nT1 -> T1 : {2/3!r}\nT2 -> T2t : 1\n")
    again = parse_model(serialize_model(m))
    assert again.probabilities[m.find("T1 -> T1t")] == 1 / 3


def test_uniform_init_of_example():
    m = uniform_init(parse_structure(EXAMPLE_MODEL_TEXT))
    assert m.distribution("T1") == {"T1->T1t": 0.25, "T1->T1": 0.25, "T1->T1+T2": 0.25, "T1->T1+T1": 0.25}
    for p in m.distribution("T2").values():
        assert p == pytest.approx(1 / 3, abs=1e-15)


def test_uniform_single_and_five_productions():
    text = ("nonterminals: A B\nterminals: a\n"
            "A -> a\nB -> a\nB -> A\nB -> B\nB -> A B\nB -> a a\n")
    m = uniform_init(parse_structure(text))
    assert m.distribution("A") == {"A->a": 1.0}
    assert all(p == pytest.approx(0.2) for p in m.distribution("B").values())


def test_structure_ignores_probabilities():
    m = parse_structure(HEAD + "T1 -> T1t : 0.9\nT1 -> T1 : 0.1\nT2 -> T2t\n")
    assert m.distribution("T1") == {"T1->T1t": 0.5, "T1->T1": 0.5}


def test_random_init_deterministic_and_normalized():
    s = example_model()
    a, b = random_init(s, 11), random_init(s, 11)
    assert np.array_equal(a.probabilities, b.probabilities)
    assert not np.array_equal(a.probabilities, random_init(s, 12).probabilities)
    for seed in range(20):
        m = random_init(s, seed)
        for v in range(m.types.m):
            assert abs(m.probabilities[m.productions_of(v)].sum() - 1) < 1e-12


def test_random_init_single_production_is_one():
    s = parse_structure("nonterminals: A\nterminals: a\nA -> a\n")
    assert random_init(s, 5).probabilities.tolist() == [1.0]


def test_structurally_equal_models_serialize_identically():
    a = example_model()
    b = uniform_init(parse_structure(serialize_model(a)))
    assert serialize_model(a) == serialize_model(b)
