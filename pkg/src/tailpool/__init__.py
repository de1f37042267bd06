"""Pooled and distributed estimation of tail indices and extreme quantiles."""

__version__ = "0.1.0"

from .errors import NumericalError
from .tail import (
    SecondOrderFit,
    SortedSample,
    TailFit,
    default_k,
    hill_estimate,
    lambda_hat,
    second_order_estimate,
    weissman_quantile,
)
from .pooling import (
    PooledEstimate,
    PooledMoments,
    amse_optimal_weights,
    bias_reduced_gamma,
    estimate_moments,
    geometric_pooled_weissman,
    pooled_gamma,
    variance_optimal_weights,
)
from .dependence import empirical_tail_copula, tail_copula_matrix
from .inference import (
    IntervalEstimate,
    TestResult,
    homogeneity_test,
    homoskedasticity_test,
)
from .distributed import MachineSummary, aggregate, machine_summarize
from .pipeline import pool_samples

__all__ = [
    "NumericalError",
    "SecondOrderFit",
    "SortedSample",
    "TailFit",
    "default_k",
    "hill_estimate",
    "lambda_hat",
    "second_order_estimate",
    "weissman_quantile",
    "PooledEstimate",
    "PooledMoments",
    "amse_optimal_weights",
    "bias_reduced_gamma",
    "estimate_moments",
    "geometric_pooled_weissman",
    "pooled_gamma",
    "variance_optimal_weights",
    "empirical_tail_copula",
    "tail_copula_matrix",
    "IntervalEstimate",
    "TestResult",
    "homogeneity_test",
    "homoskedasticity_test",
    "MachineSummary",
    "aggregate",
    "machine_summarize",
    "pool_samples",
]
