"""Attribution benchmark harness: all-at-once judging and exact-match metrics.

Runs any attributor backend over annotated trajectories and scores it at
agent and step granularity. Evaluation is exact-match on both levels even
though training rewards smooth the step distance; those are different
regimes by design.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TypeVar

from . import rewards
from .gateway import ChatGateway, GatewayError
from .rewards import AttributionPrediction, CandidateOutput
from .templates import load_template, render
from .trajectory import (
    AgentId,
    AnnotatedTrajectory,
    Annotation,
    AnnotationMethod,
    Step,
    Trajectory,
    validate_annotated,
)

T = TypeVar("T")


class JudgeMode(str, Enum):
    ALL_AT_ONCE = "all_at_once"


@dataclass(frozen=True)
class EvalSetting:
    """Whether the attributor sees the ground truth, and how it is prompted."""

    with_ground_truth: bool
    mode: JudgeMode = JudgeMode.ALL_AT_ONCE


class AttributorBackend(Protocol):
    """Produces the raw attribution text for one trajectory prompt."""

    def __call__(self, trajectory: Trajectory, prompt: str) -> str: ...


class JudgeError(Exception):
    """Attributor backend failed for one item after retries."""


def render_trajectory(t: Trajectory) -> str:
    """Serialize steps as numbered blocks; step numbers match answer stepIDs."""
    blocks = []
    for step in t.steps:
        lines = [f"Step {step.index} - {step.agent.name}:", f"  action: {step.action}"]
        if step.feedback:
            lines.append(f"  feedback: {step.feedback}")
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def render_judge_prompt(t: Trajectory, setting: EvalSetting,
                        template: str | None = None) -> str:
    text = template if template is not None else load_template("judge")
    if setting.with_ground_truth:
        truth_section = f"Ground truth for the task:\n{t.ground_truth}"
    else:
        truth_section = "No ground truth is available; judge from the trajectory alone."
    agent_names = ", ".join(dict.fromkeys(s.agent.name for s in t.steps))
    return render(
        text,
        task_id=t.task_id,
        query=t.query,
        trajectory=render_trajectory(t),
        final_answer=t.final_answer,
        ground_truth_section=truth_section,
        agent_names=agent_names,
        last_step=str(len(t.steps) - 1),
    )


def judge(backend: AttributorBackend, t: Trajectory, setting: EvalSetting,
          retries: int = 2, template: str | None = None) -> CandidateOutput:
    """Judge one trajectory all-at-once and parse the reply.

    A malformed reply is not an error: it comes back as format_ok=0 and is
    counted as a miss downstream.
    """
    if setting.mode is not JudgeMode.ALL_AT_ONCE:
        raise ValueError(f"unsupported judge mode {setting.mode}")
    if setting.with_ground_truth and t.ground_truth is None:
        raise ValueError(f"trajectory {t.task_id} has no ground_truth for the w/ G setting")

    prompt = render_judge_prompt(t, setting, template)
    last_error: Exception | None = None
    for _ in range(retries + 1):
        try:
            reply = backend(t, prompt)
        except GatewayError as exc:
            last_error = exc
            continue
        return rewards.parse_output(reply)
    raise JudgeError(f"attributor failed on {t.task_id}: {last_error}") from last_error


@dataclass
class JudgeBatchResult:
    predictions: list[CandidateOutput | None] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def judged(self) -> int:
        return sum(1 for p in self.predictions if p is not None)


def judge_batch(backend: AttributorBackend, items: Sequence[Trajectory],
                setting: EvalSetting, retries: int = 2, workers: int = 1,
                template: str | None = None) -> JudgeBatchResult:
    """Judge a corpus; per-item errors are recorded and the batch continues."""

    def one(t: Trajectory) -> tuple[CandidateOutput | None, str | None]:
        try:
            return judge(backend, t, setting, retries, template), None
        except (JudgeError, ValueError) as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, items))
    else:
        outcomes = [one(t) for t in items]

    result = JudgeBatchResult()
    for t, (prediction, error) in zip(items, outcomes):
        result.predictions.append(prediction)
        if error is not None:
            result.errors.append((t.task_id, error))
    return result


# --- metrics ---------------------------------------------------------------------

@dataclass(frozen=True)
class ItemResult:
    task_id: str
    predicted: AttributionPrediction | None
    truth: AttributionPrediction
    agent_hit: int
    step_hit: int


@dataclass(frozen=True)
class EvalResult:
    agent_accuracy: float
    step_accuracy: float
    n: int
    per_item: tuple[ItemResult, ...]


def evaluate(predictions: Sequence[CandidateOutput], truths: Sequence[Annotation],
             task_ids: Sequence[str] | None = None) -> EvalResult:
    """Exact-match agent- and step-level accuracy over aligned pairs.

    Unparsed predictions count as misses on both levels.
    """
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions vs {len(truths)} truths")
    if task_ids is not None and len(task_ids) != len(truths):
        raise ValueError("task_ids misaligned with truths")

    items: list[ItemResult] = []
    for i, (candidate, truth) in enumerate(zip(predictions, truths)):
        task_id = task_ids[i] if task_ids is not None else str(i)
        parsed = candidate.parsed if candidate.format_ok else None
        agent_hit = step_hit = 0
        if parsed is not None:
            agent_hit = int(rewards.agent_matches(parsed.agent, truth.agent.name,
                                                  truth.agent.index))
            step_hit = int(parsed.step == truth.step)
        items.append(ItemResult(
            task_id=task_id,
            predicted=parsed,
            truth=AttributionPrediction(truth.agent.name, truth.step),
            agent_hit=agent_hit,
            step_hit=step_hit,
        ))

    n = len(items)
    agent_acc = sum(i.agent_hit for i in items) / n if n else 0.0
    step_acc = sum(i.step_hit for i in items) / n if n else 0.0
    return EvalResult(agent_acc, step_acc, n, tuple(items))


def eval_result_to_dict(result: EvalResult) -> dict[str, Any]:
    return {
        "agent_accuracy": result.agent_accuracy,
        "step_accuracy": result.step_accuracy,
        "n": result.n,
        "per_item": [
            {
                "task_id": item.task_id,
                "predicted": (
                    {"agent": item.predicted.agent, "step": item.predicted.step}
                    if item.predicted else None
                ),
                "truth": {"agent": item.truth.agent, "step": item.truth.step},
                "agent_hit": item.agent_hit,
                "step_hit": item.step_hit,
            }
            for item in result.per_item
        ],
    }


# --- scripted attributors -----------------------------------------------------------

def _answer(agent_name: str, step: int, note: str = "scripted") -> str:
    return f"<think>{note}</think><answer>{agent_name} | {step}</answer>"


def oracle_attributor(annotations: Mapping[str, Annotation]) -> AttributorBackend:
    """Reads the annotation; the metric-closure reference backend."""

    def backend(t: Trajectory, prompt: str) -> str:
        truth = annotations[t.task_id]
        return _answer(truth.agent.name, truth.step, note="oracle lookup")

    return backend


def scrambled_oracle(annotations: Mapping[str, Annotation], seed: int | str = 0) -> AttributorBackend:
    """Right agent, uniformly re-drawn step; collision rate is enumerable."""

    def backend(t: Trajectory, prompt: str) -> str:
        truth = annotations[t.task_id]
        step = random.Random(f"{seed}:{t.task_id}").randrange(len(t.steps))
        return _answer(truth.agent.name, step, note="scrambled step")

    return backend


def llm_attributor(gw: ChatGateway) -> AttributorBackend:
    def backend(t: Trajectory, prompt: str) -> str:
        return gw.complete([{"role": "user", "content": prompt}])

    return backend


def consistent_prediction(t: Trajectory, parsed: AttributionPrediction) -> bool:
    """True when the predicted agent is the actor of the predicted step."""
    if not 0 <= parsed.step < len(t.steps):
        return False
    return rewards.agent_matches(parsed.agent, t.steps[parsed.step].agent.name,
                                 t.steps[parsed.step].agent.index)


# --- benchmark import ------------------------------------------------------------

@dataclass
class ImportReport:
    items: list[AnnotatedTrajectory] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)


def _iter_benchmark_records(path: Path) -> Iterable[tuple[str, dict[str, Any]]]:
    if path.is_dir():
        for file in sorted(path.glob("*.json")):
            yield from _iter_benchmark_records(file)
        return
    text = path.read_text(encoding="utf-8")
    stripped = text.strip()
    if not stripped:
        return
    if stripped.startswith("["):
        for i, record in enumerate(json.loads(text)):
            yield f"{path.name}[{i}]", record
    elif "\n" in stripped and not stripped.startswith("{"):
        raise ValueError(f"{path}: unrecognized benchmark file layout")
    else:
        # Either one object per file or JSONL; sniff by trying whole-file first.
        try:
            yield path.name, json.loads(text)
        except json.JSONDecodeError:
            for i, line in enumerate(l for l in text.splitlines() if l.strip()):
                yield f"{path.name}:{i + 1}", json.loads(line)


_AGENT_KEYS = ("name", "agent", "role")
_STEP_CONTENT_KEYS = ("content", "text", "message")


def _history_step(entry: Mapping[str, Any], index: int,
                  roster: dict[str, int]) -> Step:
    name = next((str(entry[k]) for k in _AGENT_KEYS if entry.get(k)), "unknown")
    content = next((str(entry[k]) for k in _STEP_CONTENT_KEYS if entry.get(k)), "")
    agent_index = roster.setdefault(name, len(roster))
    return Step(index=index, agent=AgentId(agent_index, name),
                action=content or "(empty)", feedback=None)


def import_whowhen(path: str | Path, step_base: int = 0) -> ImportReport:
    """Convert benchmark failure-attribution records to internal types.

    ``step_base`` is subtracted from every mistake_step label (pass 1 for
    1-based files); the chosen convention is recorded in the report's
    provenance. Records that cannot be converted are skipped with a reason,
    never silently dropped.
    """
    path = Path(path)
    report = ImportReport(provenance={
        "source": "whowhen",
        "path": str(path),
        "step_base": step_base,
    })

    for source_id, record in _iter_benchmark_records(path):
        history = record.get("history") or record.get("steps")
        if not history:
            report.skipped.append((source_id, "missing history"))
            continue
        if record.get("is_correct") in (True, "True", "true", 1):
            report.skipped.append((source_id, "not a failure"))
            continue
        if record.get("mistake_step") in (None, ""):
            report.skipped.append((source_id, "missing mistake_step"))
            continue
        if not record.get("mistake_agent"):
            report.skipped.append((source_id, "missing mistake_agent"))
            continue

        try:
            raw_step = int(record["mistake_step"])
        except (TypeError, ValueError):
            report.skipped.append((source_id, f"unparseable mistake_step {record['mistake_step']!r}"))
            continue
        step = raw_step - step_base

        roster: dict[str, int] = {}
        steps = tuple(_history_step(entry, i, roster) for i, entry in enumerate(history))
        if not 0 <= step < len(steps):
            report.skipped.append((source_id, f"mistake_step {raw_step} out of range"))
            continue

        actor = steps[step].agent
        labeled = str(record["mistake_agent"]).strip()
        if actor.name.strip().casefold() != labeled.casefold():
            report.skipped.append(
                (source_id, f"mistake_agent {labeled!r} is not the actor at step {step}")
            )
            continue

        trajectory = Trajectory(
            task_id=str(record.get("id") or record.get("task_id") or source_id),
            query=str(record.get("question") or record.get("query") or ""),
            system_name=str(record.get("system") or record.get("source_system") or "whowhen"),
            steps=steps,
            final_answer=str(record.get("final_answer") or steps[-1].action),
            outcome=0,
            ground_truth=(
                str(record["ground_truth"]) if record.get("ground_truth") is not None else None
            ),
            feedback_log=None,
        )
        annotation = Annotation(
            agent=actor,
            step=step,
            method=AnnotationMethod.COUNTERFACTUAL,
            rationale=record.get("reason") or record.get("mistake_reason"),
        )
        item = AnnotatedTrajectory(trajectory, annotation)
        violations = validate_annotated(item)
        if violations:
            report.skipped.append((source_id, "; ".join(violations)))
            continue
        report.items.append(item)
    return report


# --- deterministic splits --------------------------------------------------------

def split(items: Sequence[T], ratio: float, seed: int | str,
          key: Callable[[T], Any] | None = None) -> tuple[list[T], list[T]]:
    """Deterministic seeded train/test partition, stratified when keyed.

    ``ratio`` is the train fraction. When ``key`` is omitted, items exposing
    a ``domain`` attribute are stratified by it automatically. Degenerate
    partitions (an empty side in any stratum) are an error.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if not items:
        raise ValueError("cannot split an empty dataset")

    if key is None and all(hasattr(item, "domain") for item in items):
        key = lambda item: getattr(item, "domain")

    groups: dict[Any, list[T]] = {}
    for item in items:
        group_key = key(item) if key is not None else "all"
        group_key = getattr(group_key, "value", group_key)
        groups.setdefault(str(group_key), []).append(item)

    train: list[T] = []
    test: list[T] = []
    for group_key in sorted(groups):
        members = list(groups[group_key])
        random.Random(f"{seed}:{group_key}").shuffle(members)
        n_train = int(len(members) * ratio)
        if n_train == 0 or n_train == len(members):
            raise ValueError(
                f"degenerate split for stratum {group_key!r}: "
                f"{n_train}/{len(members) - n_train} of {len(members)}"
            )
        train.extend(members[:n_train])
        test.extend(members[n_train:])
    return train, test
