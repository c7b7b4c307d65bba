"""Variational simulation of lattice SDE distributions and payoff expectations."""
from .expectation import (
    PayoffOperator,
    PiecewisePoly,
    build_Sf,
    call_payoff,
    expectation_exact,
    expectation_sampled,
    indicator_interval,
    indicator_prefix,
    measurement_budget,
    observable_decomposition,
    poly_error_bound,
)
from .generator import (
    InitialDistribution,
    LatticeDistribution,
    ProcessSpec,
    build_L_dense,
    build_L_unitary_sum,
    gbm,
    ornstein_uhlenbeck,
    transition_probs,
)
from .multivar import (
    MultiPiecewisePoly,
    MultiProcessSpec,
    build_L_multi_dense,
    build_L_multi_unitary_sum,
    multi_Sf,
    multi_transition_probs,
)
from .oracle import analytic_moments, distribution_stats, euler_maruyama_mc, runge_kutta
from .qsim import Circuit, StateVector, UnitarySum
from .vqs import AnsatzSpec, AnsatzState, Shots, simulate

__version__ = "0.1.0"

__all__ = [
    "AnsatzSpec",
    "AnsatzState",
    "Circuit",
    "InitialDistribution",
    "LatticeDistribution",
    "MultiPiecewisePoly",
    "MultiProcessSpec",
    "PayoffOperator",
    "PiecewisePoly",
    "ProcessSpec",
    "Shots",
    "StateVector",
    "UnitarySum",
    "analytic_moments",
    "build_L_dense",
    "build_L_multi_dense",
    "build_L_multi_unitary_sum",
    "build_L_unitary_sum",
    "build_Sf",
    "call_payoff",
    "distribution_stats",
    "euler_maruyama_mc",
    "expectation_exact",
    "expectation_sampled",
    "gbm",
    "indicator_interval",
    "indicator_prefix",
    "measurement_budget",
    "multi_Sf",
    "multi_transition_probs",
    "observable_decomposition",
    "ornstein_uhlenbeck",
    "poly_error_bound",
    "runge_kutta",
    "simulate",
    "transition_probs",
]
