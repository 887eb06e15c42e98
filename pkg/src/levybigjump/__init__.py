"""Monte Carlo toolkit for heavy-tailed Levy processes with negative drift:
exact big-jump conditional samplers, stratified rare-event estimators,
exponential functionals, and branching-in-environment survival asymptotics."""

from .model import (
    ConditionsReport,
    EstimatorError,
    FSpec,
    LeftJumpSpec,
    LevyModel,
    ModelError,
    TailSpec,
    canonical_model,
    load_model,
    save_model,
    validate_heavy_tail_conditions,
)
from .rngstream import RngStream
from .path import (
    JumpRecord,
    Path,
    count_large_jumps,
    first_large_jump,
    first_passage,
    running_extrema,
    sample_path,
    truncate_large,
)
from .functional import McEstimate, QuadratureResult, estimate_ef, eval_f, \
    exp_functional
from .rarevent import (
    BigJumpProposal,
    LimitLawSample,
    estimate_limit_coefficient,
    estimate_p_tau_exceeds,
    estimate_p_xi_positive,
    sample_given_one_big_jump,
    sample_limit_law,
    scaled_path_distance,
    size_biased_jump_check,
)
from .fluctuation import (
    RenewalEstimate,
    estimate_mean_tau,
    estimate_occupation_product,
    estimate_renewal,
    laplace_limit_rhs,
    laplace_positive_part,
    local_probability_ratio,
    reflected_joint_cdf,
)
from .verify import TrendReport, chisq_poisson, event_equivalence, ks_test, \
    trend_check
from .cbre import BranchingSpec, RegimeReport, classify_regime, \
    survival_probability, u_solve

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
