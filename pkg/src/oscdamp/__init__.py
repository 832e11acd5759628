"""Asymptotically optimal damping of coupled harmonic oscillators by one
bounded control: reachable-set geometry, the three-stage feedback law, and
the simulation/diagnostic tooling around them."""

__version__ = "0.1.0"

from .model import System, ResonanceReport, build_system, kalman_matrix, resonance_report
from .geometry import (
    QuadratureConfig,
    MomentumSolution,
    MinTimeResult,
    z_of_p,
    h_frak,
    grad_h,
    support_H,
    grad_support_H,
    hessian_support_H,
    gauge_rho,
    exact_support_HT,
    min_time_oracle,
)
from .canonical import (
    CanonicalForm,
    build_AB,
    feedback_C,
    gauge_D,
    gauge_D_block,
    canonical_pair,
    build_canonical,
)
from .local import (
    LocalController,
    ControllabilityValue,
    q_gram,
    q_inverse_exact,
    build_controller,
    delta,
    delta_scale,
    g_form,
    solve_T,
    local_control,
    simulate_terminal,
)
from .singular import (
    SingularState,
    MuEstimate,
    btilde,
    f_singular,
    singular_state,
    project_sigma,
    estimate_mu,
)
from .highenergy import (
    HighEnergyControl,
    switching,
    bang_u,
    control_u,
    control_uU,
    rho_rate,
    mp_residual,
)
from .matching import (
    MatchingPlan,
    cond_B_value,
    cond_A_ratio,
    choose_Theta,
    choose_U,
    in_G_Theta,
    sample_G_boundary,
    sample_gauge_boundary,
    build_plan,
)
from .sim import (
    GaugeFailure,
    SimConfig,
    StageSegment,
    Trajectory,
    integrate_stage,
    run_three_stage,
    STAGE_HIGH_ENERGY,
    STAGE_REDUCED,
    STAGE_TERMINAL,
    STAGE_DONE,
)

__all__ = [
    "__version__",
    "System",
    "ResonanceReport",
    "build_system",
    "kalman_matrix",
    "resonance_report",
    "QuadratureConfig",
    "MomentumSolution",
    "MinTimeResult",
    "z_of_p",
    "h_frak",
    "grad_h",
    "support_H",
    "grad_support_H",
    "hessian_support_H",
    "gauge_rho",
    "exact_support_HT",
    "min_time_oracle",
    "CanonicalForm",
    "build_AB",
    "feedback_C",
    "gauge_D",
    "gauge_D_block",
    "canonical_pair",
    "build_canonical",
    "LocalController",
    "ControllabilityValue",
    "q_gram",
    "q_inverse_exact",
    "build_controller",
    "delta",
    "delta_scale",
    "g_form",
    "solve_T",
    "local_control",
    "simulate_terminal",
    "SingularState",
    "MuEstimate",
    "btilde",
    "f_singular",
    "singular_state",
    "project_sigma",
    "estimate_mu",
    "HighEnergyControl",
    "switching",
    "bang_u",
    "control_u",
    "control_uU",
    "rho_rate",
    "mp_residual",
    "MatchingPlan",
    "cond_B_value",
    "cond_A_ratio",
    "choose_Theta",
    "choose_U",
    "in_G_Theta",
    "sample_G_boundary",
    "sample_gauge_boundary",
    "build_plan",
    "GaugeFailure",
    "SimConfig",
    "StageSegment",
    "Trajectory",
    "integrate_stage",
    "run_three_stage",
    "STAGE_HIGH_ENERGY",
    "STAGE_REDUCED",
    "STAGE_TERMINAL",
    "STAGE_DONE",
]
