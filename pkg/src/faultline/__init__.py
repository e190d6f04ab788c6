"""Failure attribution for turn-based multi-agent systems.

Replays trajectories counterfactually to locate decisive errors, synthesizes
labeled failures by fault injection, scores candidate attributions with a
format-gated multi-granular reward, and evaluates attributors at agent and
step granularity.
"""

from .trajectory import (
    AgentId,
    AnnotatedTrajectory,
    Annotation,
    AnnotationMethod,
    Step,
    Trajectory,
    active_agent,
    validate_annotated,
    validate_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "AgentId",
    "AnnotatedTrajectory",
    "Annotation",
    "AnnotationMethod",
    "Step",
    "Trajectory",
    "active_agent",
    "validate_annotated",
    "validate_trajectory",
    "__version__",
]
