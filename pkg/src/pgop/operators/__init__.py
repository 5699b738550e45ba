"""Improvement and projection operators and their compositions."""
from pgop.operators.compose import (
    AlphaSchedule,
    CurveRow,
    StepDiagnostics,
    TrainResult,
    compose_step,
    line_search_alpha,
    train,
    with_alpha,
)
from pgop.operators.divergence import alpha_divergence, geometric_mixture, kl_divergence
from pgop.operators.improvement import VALUE_FLOOR, ImprovedDistribution, ImprovementSpec, improve
from pgop.operators.projection import (
    ProjectionSpec,
    minka_kl_iteration,
    project,
    project_with_trace,
    projection_gradient,
    projection_objective,
    projection_weights,
)

__all__ = [
    "AlphaSchedule", "CurveRow", "ImprovedDistribution", "ImprovementSpec", "ProjectionSpec",
    "StepDiagnostics", "TrainResult", "VALUE_FLOOR", "alpha_divergence", "compose_step",
    "geometric_mixture", "improve", "kl_divergence", "line_search_alpha", "minka_kl_iteration",
    "project", "project_with_trace", "projection_gradient", "projection_objective",
    "projection_weights", "train", "with_alpha",
]
