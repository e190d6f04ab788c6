"""Locate decisive errors in failed trajectories via counterfactual replay.

The scan walks steps earliest-first. For each step an analyzer backend
proposes a minimally invasive corrected action; the harness replays the
trajectory with that single substitution; the first replay that flips the
outcome to success fixes the decisive error and stops the scan. Failures no
single-step correction can flip are reported, never silently dropped.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

from .gateway import ChatGateway, GatewayError
from .harness import ReplayDirective, SystemSpec, rectify
from .templates import load_template, render
from .trajectory import (
    AnnotatedTrajectory,
    Annotation,
    AnnotationMethod,
    Trajectory,
)


class AnalyzerBackend(Protocol):
    """Proposes a corrected action for one step of a failed trajectory."""

    def __call__(self, trajectory: Trajectory, step: int, feedback: str,
                 ground_truth: str) -> str: ...


@dataclass(frozen=True)
class AnnotatorConfig:
    retries_per_step: int = 2       # fresh analyzer samples per step before advancing
    max_length_ratio: float = 4.0   # reject proposals longer than this multiple
    replay_budget: int | None = None  # hard cap on replays per trajectory

    def __post_init__(self) -> None:
        if self.retries_per_step < 1:
            raise ValueError("retries_per_step must be >= 1")
        if self.max_length_ratio <= 0:
            raise ValueError("max_length_ratio must be > 0")
        if self.replay_budget is not None and self.replay_budget < 1:
            raise ValueError("replay_budget must be >= 1 when set")


@dataclass(frozen=True)
class Attempt:
    """One probed correction; replay_outcome is None when rejected pre-replay."""

    step: int
    proposed_action: str
    replay_outcome: int | None


@dataclass
class BudgetSpent:
    replays: int = 0
    backend_calls: int = 0


@dataclass(frozen=True)
class AnnotationReport:
    result: Annotation | None
    attempts: tuple[Attempt, ...]
    budget_spent: BudgetSpent


class AnnotatorError(Exception):
    """Carries the partial scan so callers can account for spent budget."""

    def __init__(self, message: str, attempts: Sequence[Attempt], spent: BudgetSpent) -> None:
        super().__init__(message)
        self.attempts = tuple(attempts)
        self.budget_spent = spent


class BackendFailure(AnnotatorError):
    """Analyzer backend failed after its own retries."""


class ReplayBudgetExceeded(AnnotatorError):
    """The configured replay budget ran out mid-scan."""


def assemble_feedback(t: Trajectory) -> str:
    """Canonical feedback text: step-level notes then the trajectory log."""
    parts = [f"step {s.index}: {s.feedback}" for s in t.steps if s.feedback]
    if t.feedback_log:
        parts.append(f"trajectory: {t.feedback_log}")
    return "\n".join(parts)


def annotate_failure(system: SystemSpec, t: Trajectory, backend: AnalyzerBackend,
                     config: AnnotatorConfig = AnnotatorConfig()) -> AnnotationReport:
    """Scan a failed trajectory earliest-first for its decisive error.

    Stops at the first step whose proposed correction flips the outcome and
    returns it as a counterfactual annotation. Returns result=None when no
    step flips within the retry budget (the trajectory is then excluded from
    the negative set by callers).
    """
    if t.outcome != 0:
        raise ValueError("annotate_failure expects a failed trajectory (outcome 0)")
    if t.ground_truth is None:
        raise ValueError("annotate_failure requires ground_truth (the analyzer receives it)")

    feedback = assemble_feedback(t)
    attempts: list[Attempt] = []
    spent = BudgetSpent()

    for step_index in range(len(t.steps)):
        original = t.steps[step_index].action
        seen: dict[str, int | None] = {}
        for _ in range(config.retries_per_step):
            try:
                proposal = backend(t, step_index, feedback, t.ground_truth)
            except GatewayError as exc:
                spent.backend_calls += 1
                raise BackendFailure(
                    f"analyzer backend failed at step {step_index}: {exc}", attempts, spent
                ) from exc
            spent.backend_calls += 1

            if proposal in seen:
                # Deterministic backend repeated itself; no point replaying again.
                continue

            if not proposal or len(proposal) > config.max_length_ratio * max(len(original), 1):
                seen[proposal] = None
                attempts.append(Attempt(step_index, proposal, None))
                continue

            if config.replay_budget is not None and spent.replays >= config.replay_budget:
                raise ReplayBudgetExceeded(
                    f"replay budget {config.replay_budget} exhausted at step {step_index}",
                    attempts, spent,
                )
            replay = rectify(system, t, ReplayDirective(step_index, proposal))
            spent.replays += 1
            seen[proposal] = replay.outcome
            attempts.append(Attempt(step_index, proposal, replay.outcome))

            if replay.outcome == 1:
                annotation = Annotation(
                    agent=t.steps[step_index].agent,
                    step=step_index,
                    method=AnnotationMethod.COUNTERFACTUAL,
                    corrected_action=proposal,
                )
                return AnnotationReport(annotation, tuple(attempts), spent)
    return AnnotationReport(None, tuple(attempts), spent)


@dataclass
class NegativeSetResult:
    """Batch outcome: annotated items plus everything that did not make it."""

    annotated: list[AnnotatedTrajectory] = field(default_factory=list)
    excluded: list[tuple[str, str]] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)
    reports: dict[str, AnnotationReport] = field(default_factory=dict)


def build_negative_set(systems: Mapping[str, SystemSpec], failures: Iterable[Trajectory],
                       backend: AnalyzerBackend,
                       config: AnnotatorConfig = AnnotatorConfig(),
                       workers: int = 1) -> NegativeSetResult:
    """Annotate a corpus of failures; one bad item never aborts the batch.

    Trajectory-level parallelism only: the per-trajectory step scan stays
    sequential because earliest-first semantics forbid racing.
    """
    items = list(failures)
    result = NegativeSetResult()

    def one(t: Trajectory) -> tuple[str, AnnotationReport | None, str | None]:
        system = systems.get(t.system_name)
        if system is None:
            return t.task_id, None, f"no system registered for {t.system_name!r}"
        try:
            return t.task_id, annotate_failure(system, t, backend, config), None
        except (AnnotatorError, ValueError) as exc:
            return t.task_id, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, items))
    else:
        outcomes = [one(t) for t in items]

    for t, (task_id, report, error) in zip(items, outcomes):
        if error is not None:
            result.failed.append((task_id, error))
            continue
        assert report is not None
        result.reports[task_id] = report
        if report.result is None:
            result.excluded.append((task_id, "no single-step correction flips the outcome"))
        else:
            result.annotated.append(AnnotatedTrajectory(t, report.result))
    return result


def llm_analyzer(gw: ChatGateway, template: str | None = None) -> AnalyzerBackend:
    """Analyzer backed by a chat endpoint; proposes one corrected action.

    The reply is expected to carry the replacement inside <action> tags;
    otherwise the whole reply (minus code fences) is taken verbatim.
    """
    text = template if template is not None else load_template("analyzer")

    def backend(t: Trajectory, step: int, feedback: str, ground_truth: str) -> str:
        from .evaluator import render_trajectory  # local import, avoids a cycle

        target = t.steps[step]
        prompt = render(
            text,
            task_id=t.task_id,
            query=t.query,
            history=render_trajectory(t),
            step=str(step),
            agent=target.agent.name,
            action=target.action,
            feedback=feedback or "(none)",
            ground_truth=ground_truth,
        )
        reply = gw.complete([{"role": "user", "content": prompt}])
        return extract_action(reply)

    return backend


def extract_action(reply: str) -> str:
    """Pull the proposed action out of an analyzer reply."""
    if "<action>" in reply and "</action>" in reply:
        reply = reply.split("<action>", 1)[1].split("</action>", 1)[0]
    reply = reply.strip()
    if reply.startswith("```"):
        lines = reply.splitlines()
        if len(lines) >= 3 and lines[-1].strip().startswith("```"):
            reply = "\n".join(lines[1:-1]).strip()
    return reply
