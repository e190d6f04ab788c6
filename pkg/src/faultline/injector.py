"""Synthesize annotated failures from successes via programmatic fault injection.

Pick injection points at random from a successful trajectory, corrupt the
action there, and replay. The first corruption that drags the outcome to
failure yields a synthetic failed trajectory whose decisive error is known
by construction: the injection point itself.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

from .gateway import ChatGateway
from .harness import ReplayDirective, SystemSpec, rectify
from .templates import load_template, render
from .trajectory import (
    AnnotatedTrajectory,
    Annotation,
    AnnotationMethod,
    Trajectory,
)


class PerturbationKind(str, Enum):
    SCRIPTED_MUTATION = "scripted_mutation"
    LLM_BACKED = "llm_backed"


@dataclass(frozen=True)
class PerturbationContext:
    trajectory: Trajectory
    step: int
    rng: random.Random


@dataclass(frozen=True)
class PerturbationOperator:
    """Corrupts an action; the output must differ from the input.

    Scripted mutations are pure functions of (action, context) with any
    randomness drawn from the seeded context rng, so injection runs are
    reproducible end to end.
    """

    name: str
    kind: PerturbationKind
    fn: Callable[[str, PerturbationContext], str]

    def __call__(self, action: str, ctx: PerturbationContext) -> str:
        return self.fn(action, ctx)


class OperatorContractError(ValueError):
    """The perturbation returned its input unchanged (or emptied it)."""


@dataclass(frozen=True)
class InjectionAttempt:
    step: int
    corrupted_action: str
    replay_outcome: int


@dataclass(frozen=True)
class InjectionReport:
    """Scan trace: the sampled points in probe order and what each replay did."""

    result: AnnotatedTrajectory | None
    sampled_points: tuple[int, ...]
    attempts: tuple[InjectionAttempt, ...]


def _context_rng(seed: int | str, step: int) -> random.Random:
    return random.Random(f"{seed}:{step}")


def inject(system: SystemSpec, t: Trajectory, op: PerturbationOperator,
           k: int = 3, seed: int | str = 0) -> InjectionReport:
    """Try to break one successful trajectory at k sampled points.

    Points are sampled uniformly without replacement and probed in sampled
    order; the first corruption whose replay fails wins and the scan stops.
    A trajectory that survives every sampled corruption yields result=None
    with all k attempts recorded.
    """
    if t.outcome != 1:
        raise ValueError("inject expects a successful trajectory (outcome 1)")
    if not 1 <= k <= len(t.steps):
        raise ValueError(f"k must be in [1, {len(t.steps)}], got {k}")

    rng = random.Random(f"{seed}")
    points = rng.sample(range(len(t.steps)), k)

    attempts: list[InjectionAttempt] = []
    for point in points:
        original = t.steps[point].action
        corrupted = op(original, PerturbationContext(t, point, _context_rng(seed, point)))
        if corrupted == original or not corrupted:
            raise OperatorContractError(
                f"operator {op.name!r} violated its contract at step {point}"
            )
        replay = rectify(system, t, ReplayDirective(point, corrupted))
        attempts.append(InjectionAttempt(point, corrupted, replay.outcome))
        if replay.outcome == 0:
            annotation = Annotation(
                agent=t.steps[point].agent,
                step=point,
                method=AnnotationMethod.INJECTED,
                corrupted_action=corrupted,
            )
            return InjectionReport(
                AnnotatedTrajectory(replay, annotation), tuple(points), tuple(attempts)
            )
    return InjectionReport(None, tuple(points), tuple(attempts))


@dataclass
class PositiveSetResult:
    annotated: list[AnnotatedTrajectory] = field(default_factory=list)
    unbroken: list[tuple[str, str]] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)
    reports: dict[str, InjectionReport] = field(default_factory=dict)


def item_seed(seed: int | str, task_id: str) -> int:
    """Per-trajectory seed, stable across runs and input ordering."""
    digest = hashlib.sha256(f"{seed}:{task_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def build_positive_set(systems: Mapping[str, SystemSpec], successes: Iterable[Trajectory],
                       op: PerturbationOperator, k: int = 3,
                       seed: int | str = 0) -> PositiveSetResult:
    """Inject over a corpus of successes; per-item failures never abort the batch."""
    result = PositiveSetResult()
    for t in successes:
        system = systems.get(t.system_name)
        if system is None:
            result.failed.append((t.task_id, f"no system registered for {t.system_name!r}"))
            continue
        try:
            report = inject(system, t, op, k=min(k, len(t.steps)), seed=item_seed(seed, t.task_id))
        except (OperatorContractError, ValueError) as exc:
            result.failed.append((t.task_id, str(exc)))
            continue
        result.reports[t.task_id] = report
        if report.result is None:
            result.unbroken.append((t.task_id, "no sampled corruption changed the outcome"))
        else:
            result.annotated.append(report.result)
    return result


# --- scripted mutation library -------------------------------------------------

_DIGIT_RE = re.compile(r"\d")
_EXPR_RE = re.compile(r"(-?\d+)(\s*[+\-*]\s*)(-?\d+)")
_NEGATION_MAP = {
    "upper": "lower", "lower": "upper",
    "reverse": "rotate", "rotate": "reverse",
    " + ": " - ", " - ": " + ",
}


def _flip_last_digit(action: str, ctx: PerturbationContext) -> str:
    matches = list(_DIGIT_RE.finditer(action))
    if not matches:
        return action + " 0"
    m = matches[-1]
    flipped = str((int(m.group(0)) + 1) % 10)
    return action[: m.start()] + flipped + action[m.end():]


def _swap_operands(action: str, ctx: PerturbationContext) -> str:
    m = _EXPR_RE.search(action)
    if m:
        swapped = action[: m.start()] + m.group(3) + m.group(2) + m.group(1) + action[m.end():]
        if swapped != action:
            return swapped
    return _flip_last_digit(action, ctx)


def _negate_instruction(action: str, ctx: PerturbationContext) -> str:
    for needle, replacement in _NEGATION_MAP.items():
        if needle in action:
            return action.replace(needle, replacement, 1)
    return f"do not {action}"


def _truncate_content(action: str, ctx: PerturbationContext) -> str:
    if len(action) > 1:
        return action[: (len(action) + 1) // 2]
    # Single character: shift it so the output still differs and is non-empty.
    return chr(ord(action) + 1) if action != "z" else "a"


SCRIPTED_OPERATORS: dict[str, PerturbationOperator] = {
    op.name: op
    for op in (
        PerturbationOperator("numeric_flip", PerturbationKind.SCRIPTED_MUTATION, _flip_last_digit),
        PerturbationOperator("operand_swap", PerturbationKind.SCRIPTED_MUTATION, _swap_operands),
        PerturbationOperator("negate_instruction", PerturbationKind.SCRIPTED_MUTATION, _negate_instruction),
        PerturbationOperator("truncate_content", PerturbationKind.SCRIPTED_MUTATION, _truncate_content),
    )
}


def llm_perturbation(gw: ChatGateway, template: str | None = None) -> PerturbationOperator:
    """Perturbation driven by a chat endpoint via the attack-analysis prompt."""
    text = template if template is not None else load_template("attack")

    def corrupt(action: str, ctx: PerturbationContext) -> str:
        from .annotator import extract_action
        from .evaluator import render_trajectory

        prompt = render(
            text,
            task_id=ctx.trajectory.task_id,
            query=ctx.trajectory.query,
            history=render_trajectory(ctx.trajectory),
            step=str(ctx.step),
            agent=ctx.trajectory.steps[ctx.step].agent.name,
            action=action,
        )
        return extract_action(gw.complete([{"role": "user", "content": prompt}]))

    return PerturbationOperator("llm_attack", PerturbationKind.LLM_BACKED, corrupt)
