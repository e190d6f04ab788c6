"""Execution harness for scripted multi-agent systems and counterfactual replay.

A :class:`SystemSpec` bundles the pieces a turn-based system needs to run
offline: a roster of agents with bound policies, a scheduler, a stop
condition, an outcome evaluator, and a feedback (transition) rule. ``run``
executes a query; ``rectify`` replays a recorded trajectory with one action
substituted at a pivot step, keeping the prefix verbatim and re-simulating
everything downstream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol

from .trajectory import AgentId, Step, Trajectory

#: Environment note set in feedback_log when a run hits its step budget.
BUDGET_EXHAUSTED = "budget-exhausted"

History = tuple[Step, ...]


class AgentPolicy(Protocol):
    """Maps (query, visible history, pending feedback) to an action text.

    Scripted policies must be pure functions of their inputs; replay
    determinism depends on it.
    """

    def __call__(self, query: str, history: History, feedback: str | None) -> str: ...


@dataclass(frozen=True)
class BoundAgent:
    agent: AgentId
    policy: AgentPolicy


def _full_visibility(agent: AgentId, history: History) -> History:
    return history


def _last_action(history: History) -> str:
    return history[-1].action if history else ""


def _no_feedback(query: str, agent: AgentId, action: str, history: History) -> str | None:
    return None


@dataclass(frozen=True)
class SystemSpec:
    """A runnable turn-based multi-agent system.

    Fields:
        roster: agents with their bound policies; indices must be unique.
        scheduler: picks the acting agent from (step index, history so far).
        stop_condition: true when the system should halt after a step.
        evaluator: maps (final_answer, ground_truth) to the binary outcome.
        transition: produces environment feedback for a step just taken,
            from (query, acting agent, action, prior history).
        visibility: which prior steps a given agent is shown (each system
            declares its own rule; default shows everything).
        final_answer_of: extracts the final answer from the full history
            (default: the last action).
    """

    name: str
    roster: tuple[BoundAgent, ...]
    scheduler: Callable[[int, History], AgentId]
    stop_condition: Callable[[History], bool]
    evaluator: Callable[[str, str | None], int]
    transition: Callable[[str, AgentId, str, History], str | None] = _no_feedback
    visibility: Callable[[AgentId, History], History] = _full_visibility
    final_answer_of: Callable[[History], str] = _last_action
    max_steps: int = 50

    def __post_init__(self) -> None:
        object.__setattr__(self, "roster", tuple(self.roster))
        indices = [b.agent.index for b in self.roster]
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate agent indices in roster of {self.name!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def policy_for(self, agent: AgentId) -> AgentPolicy:
        for bound in self.roster:
            if bound.agent == agent:
                return bound.policy
        raise KeyError(f"agent {agent} is not in the roster of {self.name!r}")

    def is_member(self, agent: AgentId) -> bool:
        return any(bound.agent == agent for bound in self.roster)


@dataclass(frozen=True)
class ReplayDirective:
    """Arguments of the rectification operator: replace one action, replay the rest."""

    pivot_step: int
    replacement_action: str


def default_task_id(system_name: str, query: str) -> str:
    digest = hashlib.sha256(f"{system_name}\x00{query}".encode("utf-8")).hexdigest()
    return f"{system_name}-{digest[:10]}"


def _take_step(system: SystemSpec, query: str, t: int, history: History) -> Step:
    agent = system.scheduler(t, history)
    if not system.is_member(agent):
        raise RuntimeError(f"scheduler of {system.name!r} returned non-roster agent {agent}")
    visible = system.visibility(agent, history)
    pending = history[-1].feedback if history else None
    action = system.policy_for(agent)(query, visible, pending)
    feedback = system.transition(query, agent, action, history)
    return Step(index=t, agent=agent, action=action, feedback=feedback)


def _finish(system: SystemSpec, query: str, ground_truth: str | None,
            task_id: str, history: History, exhausted: bool) -> Trajectory:
    final_answer = system.final_answer_of(history)
    if exhausted:
        outcome = 0
        feedback_log = f"{BUDGET_EXHAUSTED}: max_steps={system.max_steps} reached"
    else:
        outcome = system.evaluator(final_answer, ground_truth)
        feedback_log = None
    return Trajectory(
        task_id=task_id,
        query=query,
        system_name=system.name,
        steps=history,
        final_answer=final_answer,
        outcome=outcome,
        ground_truth=ground_truth,
        feedback_log=feedback_log,
    )


def run(system: SystemSpec, query: str, ground_truth: str | None = None,
        task_id: str | None = None) -> Trajectory:
    """Execute the system on a query and return the full trajectory.

    Deterministic for scripted policies: identical inputs give identical
    trajectories. If the stop condition never fires within ``max_steps``,
    the trajectory is truncated with outcome 0 and a budget-exhausted flag.
    """
    if not query:
        raise ValueError("query must be non-empty")
    if task_id is None:
        task_id = default_task_id(system.name, query)

    history: History = ()
    exhausted = True
    for t in range(system.max_steps):
        history += (_take_step(system, query, t, history),)
        if system.stop_condition(history):
            exhausted = False
            break
    return _finish(system, query, ground_truth, task_id, history, exhausted)


def rectify(system: SystemSpec, source: Trajectory, directive: ReplayDirective) -> Trajectory:
    """Replay ``source`` with one action substituted at the pivot step.

    Steps before the pivot are reused verbatim (including their recorded
    feedback); the pivot step carries the replacement action attributed to
    the original acting agent, with its feedback regenerated; every step
    after the pivot is freshly produced by the system against the modified
    history. The outcome is re-evaluated on the new trajectory.
    """
    pivot = directive.pivot_step
    if not 0 <= pivot < len(source.steps):
        raise IndexError(f"pivot_step {pivot} out of range for trajectory of length {len(source.steps)}")

    history: History = source.steps[:pivot]
    agent = source.steps[pivot].agent
    action = directive.replacement_action
    feedback = system.transition(source.query, agent, action, history)
    history += (Step(index=pivot, agent=agent, action=action, feedback=feedback),)

    exhausted = not system.stop_condition(history)
    if exhausted:
        for t in range(pivot + 1, system.max_steps):
            history += (_take_step(system, source.query, t, history),)
            if system.stop_condition(history):
                exhausted = False
                break
    return _finish(system, source.query, source.ground_truth, source.task_id, history, exhausted)


def scripted_action(system: SystemSpec, source: Trajectory, step: int) -> str:
    """The action ``system`` would take at ``step`` given the recorded prefix.

    Reconstructs the acting agent's visible history from the source steps
    using the system's own visibility rule. Running this against a bug-free
    twin of the system that produced ``source`` yields oracle corrections.
    """
    if not 0 <= step < len(source.steps):
        raise IndexError(f"step {step} out of range")
    agent = source.steps[step].agent
    prefix = source.steps[:step]
    visible = system.visibility(agent, prefix)
    pending = prefix[-1].feedback if prefix else None
    return system.policy_for(agent)(source.query, visible, pending)


def oracle_fixes(healthy: SystemSpec, source: Trajectory) -> dict[int, str]:
    """A corrected action for every step, from a bug-free twin system."""
    return {t: scripted_action(healthy, source, t) for t in range(len(source.steps))}


def brute_force_decisive(system: SystemSpec, source: Trajectory,
                         fixes: Mapping[int, str]) -> tuple[AgentId, int] | None:
    """Exhaustive search for the decisive error: the earliest step whose
    single-action correction flips the outcome to success.

    Test oracle for the annotator. ``fixes`` must supply a corrected action
    for every step (available for scripted toy systems). Returns None when
    no single-step fix flips the failure.
    """
    if source.outcome != 0:
        raise ValueError("brute_force_decisive expects a failed trajectory")
    for t in range(len(source.steps)):
        replay = rectify(system, source, ReplayDirective(t, fixes[t]))
        if replay.outcome == 1:
            return source.steps[t].agent, t
    return None
