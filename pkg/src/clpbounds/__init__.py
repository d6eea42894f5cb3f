"""De-biased bounds for covariate-conditional linear programs."""

from .entropic import (
    Direction,
    EntropicSolution,
    eta_schedule,
    jacobians,
    logsumexp_bound,
    solve_entropic_dual,
    solve_sinkhorn,
)
from .estimators import (
    BoundsReport,
    ConditionalBoundsReport,
    PartialIdentificationBounds,
    combine_wald_interval,
    conditional_bounds,
    estimate_bounds_bfs,
    estimate_bounds_entropic,
    estimate_bounds_lse,
)
from .exceptions import BoundsError, SolverFailure, ValidationError
from .lp import (
    BasisSolution,
    Feasibility,
    Sense,
    StandardFormLP,
    Status,
    SubOptimalityProbe,
    basis_apply,
    check_feasibility,
    probe_suboptimality,
    solve_simplex,
)
from .nuisance import FoldPlan, MultinomialLogitNuisance, crossfit_nuisance
from .problems import (
    ATE,
    CellProbability,
    Compliers,
    NotOptimallyTreated,
    NotOptimalUnderZ,
    NuisanceModel,
    ObservedData,
    OracleBest,
    PowerLawRegret,
    ProblemSpec,
    UtilitySpec,
    build_iv,
    build_joint_po,
    utility_preset,
)
from .policy import (
    LogisticPolicy,
    PolicyLearner,
    PolicyObjective,
    evaluate_policy,
    fit_policy_bfs,
    fit_policy_entropic,
)
from .simulation import LatentNormalDGP, SimConfig, run_sweep, true_bound_oracle

__all__ = [
    "ATE",
    "BasisSolution",
    "BoundsError",
    "BoundsReport",
    "CellProbability",
    "Compliers",
    "ConditionalBoundsReport",
    "Direction",
    "EntropicSolution",
    "Feasibility",
    "FoldPlan",
    "LatentNormalDGP",
    "LogisticPolicy",
    "MultinomialLogitNuisance",
    "NotOptimalUnderZ",
    "NotOptimallyTreated",
    "NuisanceModel",
    "ObservedData",
    "OracleBest",
    "PartialIdentificationBounds",
    "PolicyLearner",
    "PolicyObjective",
    "PowerLawRegret",
    "ProblemSpec",
    "Sense",
    "SimConfig",
    "SolverFailure",
    "StandardFormLP",
    "Status",
    "SubOptimalityProbe",
    "UtilitySpec",
    "ValidationError",
    "basis_apply",
    "build_iv",
    "build_joint_po",
    "check_feasibility",
    "combine_wald_interval",
    "conditional_bounds",
    "crossfit_nuisance",
    "estimate_bounds_bfs",
    "estimate_bounds_entropic",
    "estimate_bounds_lse",
    "eta_schedule",
    "evaluate_policy",
    "fit_policy_bfs",
    "fit_policy_entropic",
    "jacobians",
    "logsumexp_bound",
    "probe_suboptimality",
    "run_sweep",
    "solve_entropic_dual",
    "solve_simplex",
    "solve_sinkhorn",
    "true_bound_oracle",
    "utility_preset",
]

__version__ = "0.1.0"
