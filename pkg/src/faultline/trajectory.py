"""Canonical data types for turn-based multi-agent executions and their annotations.

Everything downstream (replay, annotation, injection, scoring, evaluation)
consumes these types. All of them are immutable value objects: safe to share
across threads and to use as dict keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


@dataclass(frozen=True)
class AgentId:
    """One agent in a system roster: a stable index plus a short role label."""

    index: int
    name: str


@dataclass(frozen=True)
class Step:
    """A single turn: the acting agent, what it emitted, and any environment feedback."""

    index: int
    agent: AgentId
    action: str
    feedback: str | None = None


@dataclass(frozen=True)
class Trajectory:
    """One complete turn-based execution, ending in a binary outcome.

    ``outcome`` is 1 for success, 0 for failure. ``ground_truth`` is optional
    because both with- and without-ground-truth evaluation flows exist; its
    absence is a real state, not a sentinel. ``feedback_log`` carries
    trajectory-level environment notes (e.g. a budget-exhausted flag).
    """

    task_id: str
    query: str
    system_name: str
    steps: tuple[Step, ...]
    final_answer: str
    outcome: int
    ground_truth: str | None = None
    feedback_log: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)


class AnnotationMethod(str, Enum):
    """How a decisive-error label was obtained."""

    COUNTERFACTUAL = "counterfactual"
    INJECTED = "injected"


@dataclass(frozen=True)
class Annotation:
    """The decisive error of a failed trajectory: responsible agent and step.

    ``corrected_action`` holds the replacement that flipped the outcome when
    the label came from counterfactual replay; ``corrupted_action`` holds the
    injected corruption when the label was manufactured by fault injection.
    """

    agent: AgentId
    step: int
    method: AnnotationMethod
    rationale: str | None = None
    corrected_action: str | None = None
    corrupted_action: str | None = None


@dataclass(frozen=True)
class AnnotatedTrajectory:
    """A failed trajectory paired with its decisive-error annotation."""

    trajectory: Trajectory
    annotation: Annotation


def validate_trajectory(t: Trajectory, annotation: Annotation | None = None) -> list[str]:
    """Check every structural invariant; return human-readable violations.

    Total function: never raises, returns an empty list exactly when the
    trajectory (and the optional annotation against it) is well formed.
    """
    violations: list[str] = []
    if not t.steps:
        violations.append("trajectory has no steps")
    if t.outcome not in (0, 1):
        violations.append(f"outcome must be 0 or 1, got {t.outcome!r}")

    names_by_index: dict[int, str] = {}
    for pos, step in enumerate(t.steps):
        if step.index != pos:
            violations.append(f"non-consecutive step index at position {pos}")
        if not step.action:
            violations.append(f"empty action at position {pos}")
        if not step.agent.name:
            violations.append(f"empty agent name at position {pos}")
        if step.agent.index < 0:
            violations.append(f"negative agent index at position {pos}")
        seen = names_by_index.setdefault(step.agent.index, step.agent.name)
        if seen != step.agent.name:
            violations.append(
                f"agent index {step.agent.index} bound to two names at position {pos}: "
                f"{seen!r} and {step.agent.name!r}"
            )

    if annotation is not None:
        if not 0 <= annotation.step < len(t.steps):
            violations.append("annotation step out of range")
        else:
            actor = t.steps[annotation.step].agent
            if actor != annotation.agent:
                violations.append(
                    f"annotation agent {annotation.agent.name!r} does not match "
                    f"acting agent {actor.name!r} at step {annotation.step}"
                )
    return violations


def validate_annotated(at: AnnotatedTrajectory) -> list[str]:
    """Validate a trajectory/annotation pair, including the failures-only rule."""
    violations = validate_trajectory(at.trajectory, at.annotation)
    if at.trajectory.outcome != 0:
        violations.append("annotated trajectory must have outcome 0")
    return violations


def active_agent(t: Trajectory, step: int) -> AgentId:
    """Return the agent scheduled at ``step``; raises IndexError out of range."""
    if not 0 <= step < len(t.steps):
        raise IndexError(f"step {step} out of range for trajectory of length {len(t.steps)}")
    return t.steps[step].agent
