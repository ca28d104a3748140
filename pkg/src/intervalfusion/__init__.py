"""Fault-tolerant fusion of interval sensor readings across multiple agents.

The package models a swarm of abstract sensors that report integer-lattice
intervals around a hidden target.  Up to a known number of them are faulty
and report arbitrary well-formed intervals instead.  Several fusion rules
are provided, from the classical midpoint-of-overlap estimators to a
weighted rule that matches the exact Bayes posterior mean, plus a linear
estimator family whose coefficients trade per-agent accuracy against
cross-agent consensus, and the Monte Carlo machinery to measure all of
them under common random numbers.
"""

from .fusion import (
    DegenerateInputError,
    GbiWeights,
    LinearCoefficients,
    TransitionProfile,
    fuse_bi,
    fuse_bi_with_flag,
    fuse_gbi,
    fuse_gbi_oneopt,
    fuse_linear,
    fuse_marzullo,
    gbi_bayes_weights,
    transition_profile,
)
from .metrics import AlgorithmSpec, MetricsReport, combine_objective, evaluate
from .optimal import (
    AmplitudeSolution,
    DirectionMoments,
    InfeasibleSearchError,
    LinearFitResult,
    LinearSelection,
    MomentSet,
    SingularSystemError,
    TwoAgentLinearSolution,
    amplitude_solution,
    empirical_objective,
    estimate_moments,
    fit_linear_empirical,
    select_linear_coefficients,
    solve_linear_two_agent,
)
from .oracle import (
    InconsistentReadingsError,
    OffLatticeError,
    PiecewiseDensity,
    implied_precision,
    posterior_density,
    posterior_mean_exact,
)
from .scenario import (
    FaultPattern,
    Interval,
    ScenarioParams,
    TrialBatch,
    TrialData,
    draw_faulty_reading,
    draw_target,
    generate_trial,
    make_trial,
    sample_batch,
    trial_rng,
    truthful_interval,
)

__version__ = "0.1.0"

__all__ = [
    "AlgorithmSpec",
    "AmplitudeSolution",
    "DegenerateInputError",
    "DirectionMoments",
    "FaultPattern",
    "GbiWeights",
    "InconsistentReadingsError",
    "InfeasibleSearchError",
    "Interval",
    "LinearCoefficients",
    "LinearFitResult",
    "LinearSelection",
    "MetricsReport",
    "MomentSet",
    "OffLatticeError",
    "PiecewiseDensity",
    "ScenarioParams",
    "SingularSystemError",
    "TransitionProfile",
    "TrialBatch",
    "TrialData",
    "TwoAgentLinearSolution",
    "amplitude_solution",
    "combine_objective",
    "draw_faulty_reading",
    "draw_target",
    "empirical_objective",
    "estimate_moments",
    "evaluate",
    "fit_linear_empirical",
    "fuse_bi",
    "fuse_bi_with_flag",
    "fuse_gbi",
    "fuse_gbi_oneopt",
    "fuse_linear",
    "fuse_marzullo",
    "gbi_bayes_weights",
    "generate_trial",
    "implied_precision",
    "make_trial",
    "posterior_density",
    "posterior_mean_exact",
    "sample_batch",
    "select_linear_coefficients",
    "solve_linear_two_agent",
    "transition_profile",
    "trial_rng",
    "truthful_interval",
]
