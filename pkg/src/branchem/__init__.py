"""EM estimation of offspring distributions in multitype branching processes
with terminal types, from generation counts."""

__version__ = "0.1.0"

from .em import EMConfig, EMResult, em_step, fit
from .inside_outside import (
    MULTISET,
    ORDERED,
    ExpectedCounts,
    aggregate_counts,
    expected_counts,
    inner_probabilities,
    outer_probabilities,
)
from .model import (
    OffspringModel,
    Production,
    TypeTable,
    parse_model,
    parse_structure,
    random_init,
    serialize_model,
    uniform_init,
)
from .oracle import enumerate_trees, oracle_expected_counts
from .simulator import Observation, SimConfig, simulate_sample, simulate_tree
from .trees import DerivationTree, complete_data_mle, count_occurrences, parse_tree, serialize_tree, yield_vector
