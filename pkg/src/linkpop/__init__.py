"""Bayesian record linkage and population size estimation for two files of
categorical records, with the classical comparison-vector baselines."""

from .core import (
    FrequencyVector,
    InconsistentStateError,
    KeySchema,
    LatentState,
    MatchingMatrix,
    RecordTable,
    SchemaError,
    ThetaBlocks,
    cell_of,
    frequencies,
    t_from,
    tuple_of,
)
from .decision import PairPosterior, bayes_estimate, error_rates, loss
from .sampler import (
    NPosterior,
    PosteriorDraws,
    PriorConfig,
    SamplerConfig,
    run_chain,
    sample_N,
)

__all__ = [
    "FrequencyVector",
    "InconsistentStateError",
    "KeySchema",
    "LatentState",
    "MatchingMatrix",
    "NPosterior",
    "PairPosterior",
    "PosteriorDraws",
    "PriorConfig",
    "RecordTable",
    "SamplerConfig",
    "SchemaError",
    "ThetaBlocks",
    "bayes_estimate",
    "cell_of",
    "error_rates",
    "frequencies",
    "loss",
    "run_chain",
    "sample_N",
    "t_from",
    "tuple_of",
]

__version__ = "0.1.0"
