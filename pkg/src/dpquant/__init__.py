"""Differentially private multiple-quantile release with prediction priors."""

from dpquant.core import (
    Interval,
    QuantileList,
    SortedDataset,
    gap,
    make_rng,
    max_gap,
    min_separation,
    optimal_interval,
    restrict,
)
from dpquant.priors import (
    Cauchy,
    EdgeAdapted,
    HalfCauchy,
    Laplace,
    Mixture,
    PiecewiseConstant,
    Uniform,
    adapt_conditional,
    adapt_edge,
    laplace_from_params,
    mass,
    mix,
    sample_in,
)
from dpquant.mechanisms import (
    ReleasePlan,
    ReleaseResult,
    budget_schedule,
    default_arity,
    release_multi,
    release_single,
)

__version__ = "0.1.0"
