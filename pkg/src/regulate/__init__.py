"""Adaptive set-point regulation for discrete-time nonlinear plants with
parametric uncertainty: plant simulation and sensitivity diagnostics,
trajectory-matching parameter estimation, bounded finite-horizon control
synthesis, and the closed-loop block regulation algorithms."""

from .benchmarks import (
    UNIDENTIFIABLE,
    BenchmarkOracle,
    BenchmarkSpec,
    SingularInput,
    UnknownModel,
    get_model,
    oracle_deadbeat,
    oracle_parameter,
)
from .estimator import (
    EstimateResult,
    IdentifiabilityReport,
    NotConverged,
    ObservationHistory,
    estimate,
    identifiability_margin,
    residual_norm,
)
from .plant import (
    DimensionMismatch,
    ExcitationReport,
    InputSequence,
    PlantModel,
    StateSequence,
    as_inputs,
    controllability_rank_check,
    excitation_rank_check,
    jacobian_input,
    jacobian_theta,
    numeric_rank,
    simulate,
    stacked_map,
    step,
    terminal_map,
)
from .regulator import (
    BlockRecord,
    InclusionOptions,
    MaxBlocksExceeded,
    MaxInnerRetriesExceeded,
    RegulatorSchedule,
    RunOutcome,
    SolverOptions,
    inclusion_check,
    run_exact,
    run_inexact,
    schedule_step,
)
from .synthesis import (
    ControlPlan,
    FeasibilityReport,
    Infeasible,
    SynthesisBounds,
    feasibility_probe,
    synthesize,
    verify_plan,
)

__all__ = [
    "UNIDENTIFIABLE",
    "BenchmarkOracle",
    "BenchmarkSpec",
    "BlockRecord",
    "ControlPlan",
    "DimensionMismatch",
    "EstimateResult",
    "ExcitationReport",
    "FeasibilityReport",
    "IdentifiabilityReport",
    "InclusionOptions",
    "Infeasible",
    "InputSequence",
    "MaxBlocksExceeded",
    "MaxInnerRetriesExceeded",
    "NotConverged",
    "ObservationHistory",
    "PlantModel",
    "RegulatorSchedule",
    "RunOutcome",
    "SingularInput",
    "SolverOptions",
    "StateSequence",
    "SynthesisBounds",
    "UnknownModel",
    "as_inputs",
    "controllability_rank_check",
    "estimate",
    "excitation_rank_check",
    "feasibility_probe",
    "get_model",
    "identifiability_margin",
    "inclusion_check",
    "jacobian_input",
    "jacobian_theta",
    "numeric_rank",
    "oracle_deadbeat",
    "oracle_parameter",
    "residual_norm",
    "run_exact",
    "run_inexact",
    "schedule_step",
    "simulate",
    "stacked_map",
    "step",
    "synthesize",
    "terminal_map",
    "verify_plan",
]
