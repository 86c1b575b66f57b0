"""HARA forward performance processes on finite event trees.

Synthesizes power and log forward utilities by backward recursion from
terminal data, together with their optimal portfolio-rate processes, the
minimal Hellinger martingale densities they induce, and exhaustive
verification of the defining martingale/supermartingale identities.
"""

from .hellinger import (
    DensityProcess,
    HellingerIncrements,
    check_log_identity,
    check_reconstruction_power,
    doob_decomposition,
    hellinger_process,
    mhm_density_from_theta,
    reweighted_tree,
    verify_mhm_domination,
)
from .kernels import (
    K_p,
    RiskAversion,
    f_q,
    phi_p,
    portfolio_to_rate,
    psi_power,
    rate_to_portfolio,
    wealth_process,
    y_log,
)
from .optimizer import (
    NodeSolution,
    SolverFailure,
    binomial_log_closed_form,
    binomial_power_closed_form,
    solve_log_foc,
    solve_node_foc,
    solve_power_foc,
)
from .synthesis import (
    ForwardUtilityResult,
    HaraSpec,
    binomial_a_D,
    synthesize_log,
    synthesize_power,
    transform_under_density,
)
from .tree import (
    AdaptedProcess,
    AdmissibleSet,
    MarketTree,
    PredictableProcess,
    admissible_set,
    build_binomial,
    build_explicit,
    conditional_expectation,
    freeze_after,
    truncate,
)
from .verifier import (
    NonconstancyReport,
    RandomFieldUtility,
    VerificationReport,
    detect_nonconstant_p,
    validate_utility_shape,
    verify_forward,
)

__all__ = [
    "AdaptedProcess", "AdmissibleSet", "DensityProcess", "ForwardUtilityResult",
    "HaraSpec", "HellingerIncrements", "K_p", "MarketTree", "NodeSolution",
    "NonconstancyReport", "PredictableProcess", "RandomFieldUtility",
    "RiskAversion", "SolverFailure", "VerificationReport", "admissible_set",
    "binomial_a_D", "binomial_log_closed_form", "binomial_power_closed_form",
    "build_binomial", "build_explicit", "check_log_identity",
    "check_reconstruction_power", "conditional_expectation",
    "detect_nonconstant_p", "doob_decomposition", "f_q", "freeze_after",
    "hellinger_process", "mhm_density_from_theta", "phi_p",
    "portfolio_to_rate", "psi_power", "rate_to_portfolio", "reweighted_tree",
    "solve_log_foc", "solve_node_foc", "solve_power_foc", "synthesize_log",
    "synthesize_power", "transform_under_density", "truncate",
    "validate_utility_shape", "verify_forward", "wealth_process", "y_log",
]
