"""Structured mean-field inference for pairwise discrete Markov random fields."""

from .graph_core import (
    ComponentDecomposition,
    Graph,
    GraphError,
    Kind,
    SubgraphSelection,
    classify,
    comb_tree,
    connected_components,
    empty_selection,
    grid,
    rows_forest,
    unique_path,
)
from .model import Model, StateSpace, ising, ising_grid, split_params, suff_stats
from .tree_inference import (
    ForestMoments,
    IntractableError,
    brute_force,
    exact_log_partition,
    forest_entropy,
    sample_forest,
    sum_product,
)
from .meanfield import MFProblem, SolveOptions, objective, solve

__version__ = "0.1.0"
