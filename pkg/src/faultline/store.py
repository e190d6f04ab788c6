"""Dataset persistence: JSONL codecs, record schema, and run configuration.

Serialization lives here, not on the domain types. Every record is one JSON
object per line, UTF-8, with a fixed field order so identical inputs produce
byte-identical files. Timestamps sit in a dedicated provenance field so
determinism checks can exclude them.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from .trajectory import (
    AgentId,
    AnnotatedTrajectory,
    Annotation,
    AnnotationMethod,
    Step,
    Trajectory,
)

SCHEMA_VERSION = 1


class StoreError(ValueError):
    """Raised for malformed files; the message names the offending line."""


class Domain(str, Enum):
    CODING = "coding"
    MATH = "math"
    AGENTIC = "agentic"


@dataclass(frozen=True)
class Provenance:
    """How a record came to be. ``created_at`` is the only non-deterministic field."""

    method: str
    seed: int | None = None
    backends: tuple[str, ...] = ()
    created_at: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "backends", tuple(self.backends))


@dataclass(frozen=True)
class DatasetRecord:
    """One trajectory, optionally annotated, with domain and provenance."""

    trajectory: Trajectory
    annotation: Annotation | None
    domain: Domain
    source_system: str
    provenance: Provenance


def validate_record(record: DatasetRecord) -> list[str]:
    """Annotation present iff the trajectory is a labeled failure."""
    violations: list[str] = []
    if record.annotation is not None and record.trajectory.outcome != 0:
        violations.append("annotated record must have outcome 0")
    if record.annotation is not None:
        from .trajectory import validate_trajectory

        violations.extend(validate_trajectory(record.trajectory, record.annotation))
    return violations


# --- dict codecs (stable field order) ----------------------------------------

def step_to_dict(step: Step) -> dict[str, Any]:
    return {
        "index": step.index,
        "agent": {"index": step.agent.index, "name": step.agent.name},
        "action": step.action,
        "feedback": step.feedback,
    }


def step_from_dict(d: dict[str, Any]) -> Step:
    agent = d["agent"]
    return Step(
        index=d["index"],
        agent=AgentId(index=agent["index"], name=agent["name"]),
        action=d["action"],
        feedback=d.get("feedback"),
    )


def trajectory_to_dict(t: Trajectory) -> dict[str, Any]:
    return {
        "task_id": t.task_id,
        "query": t.query,
        "system_name": t.system_name,
        "steps": [step_to_dict(s) for s in t.steps],
        "final_answer": t.final_answer,
        "outcome": t.outcome,
        "ground_truth": t.ground_truth,
        "feedback_log": t.feedback_log,
    }


def trajectory_from_dict(d: dict[str, Any]) -> Trajectory:
    return Trajectory(
        task_id=d["task_id"],
        query=d["query"],
        system_name=d["system_name"],
        steps=tuple(step_from_dict(s) for s in d["steps"]),
        final_answer=d["final_answer"],
        outcome=d["outcome"],
        ground_truth=d.get("ground_truth"),
        feedback_log=d.get("feedback_log"),
    )


def annotation_to_dict(a: Annotation) -> dict[str, Any]:
    return {
        "agent": {"index": a.agent.index, "name": a.agent.name},
        "step": a.step,
        "method": a.method.value,
        "rationale": a.rationale,
        "corrected_action": a.corrected_action,
        "corrupted_action": a.corrupted_action,
    }


def annotation_from_dict(d: dict[str, Any]) -> Annotation:
    return Annotation(
        agent=AgentId(index=d["agent"]["index"], name=d["agent"]["name"]),
        step=d["step"],
        method=AnnotationMethod(d["method"]),
        rationale=d.get("rationale"),
        corrected_action=d.get("corrected_action"),
        corrupted_action=d.get("corrupted_action"),
    )


def record_to_dict(record: DatasetRecord) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "trajectory": trajectory_to_dict(record.trajectory),
        "annotation": annotation_to_dict(record.annotation) if record.annotation else None,
        "domain": record.domain.value,
        "source_system": record.source_system,
        "provenance": {
            "method": record.provenance.method,
            "seed": record.provenance.seed,
            "backends": list(record.provenance.backends),
            "created_at": record.provenance.created_at,
            "extra": record.provenance.extra,
        },
    }


def record_from_dict(d: dict[str, Any]) -> DatasetRecord:
    prov = d["provenance"]
    return DatasetRecord(
        trajectory=trajectory_from_dict(d["trajectory"]),
        annotation=annotation_from_dict(d["annotation"]) if d.get("annotation") else None,
        domain=Domain(d["domain"]),
        source_system=d["source_system"],
        provenance=Provenance(
            method=prov["method"],
            seed=prov.get("seed"),
            backends=tuple(prov.get("backends", ())),
            created_at=prov.get("created_at"),
            extra=prov.get("extra", {}),
        ),
    )


def annotated_to_record(item: AnnotatedTrajectory, domain: Domain,
                        provenance: Provenance) -> DatasetRecord:
    return DatasetRecord(
        trajectory=item.trajectory,
        annotation=item.annotation,
        domain=domain,
        source_system=item.trajectory.system_name,
        provenance=provenance,
    )


# --- JSONL io -----------------------------------------------------------------

def write_jsonl(items: Iterable[dict[str, Any]], path: str | Path) -> int:
    """Write one JSON object per line; returns the number of lines written."""
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    """Read a JSONL file fully; a malformed line aborts with its line number."""
    path = Path(path)
    items: list[dict[str, Any]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                items.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StoreError(f"{path}: malformed JSON on line {lineno}: {exc.msg}") from exc
    return items


def write_records(records: Iterable[DatasetRecord], path: str | Path) -> int:
    return write_jsonl((record_to_dict(r) for r in records), path)


def read_records(path: str | Path) -> list[DatasetRecord]:
    records = []
    for lineno, d in enumerate(read_jsonl(path), start=1):
        try:
            records.append(record_from_dict(d))
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreError(f"{path}: bad record on line {lineno}: {exc}") from exc
    return records


def read_tasks(path: str | Path) -> list[tuple[str, str | None]]:
    """Task files: one JSON object per line with query and ground_truth."""
    tasks = []
    for lineno, d in enumerate(read_jsonl(path), start=1):
        if "query" not in d:
            raise StoreError(f"{path}: task on line {lineno} is missing 'query'")
        tasks.append((d["query"], d.get("ground_truth")))
    return tasks


def write_tasks(tasks: Iterable[tuple[str, str | None]], path: str | Path) -> int:
    return write_jsonl(({"query": q, "ground_truth": g} for q, g in tasks), path)


# --- run configuration ---------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Every knob a pipeline run can turn, with documented defaults.

    lam/sigma are the reward weights; k is the number of injection points
    sampled per successful trajectory. The trainer fields (batch_size,
    rollouts, learning_rate, b0) are recorded defaults for the scoring
    bridge, nothing more.
    """

    lam: float = 0.5
    sigma: float = 1.0
    k: int = 3
    seed: int = 0
    max_steps: int = 50
    retries_per_step: int = 2
    max_length_ratio: float = 4.0
    replay_budget: int | None = None
    endpoint: str | None = None
    model: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    request_timeout: float = 60.0
    request_retries: int = 3
    backoff_base: float = 0.5
    concurrency: int = 4
    credential_env: str = "FAULTLINE_API_KEY"
    batch_size: int = 32
    rollouts: int = 8
    learning_rate: float = 1e-6
    b0: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.retries_per_step < 1:
            raise ValueError("retries_per_step must be >= 1")
        if self.max_length_ratio <= 0:
            raise ValueError("max_length_ratio must be > 0")
        if self.replay_budget is not None and self.replay_budget < 1:
            raise ValueError("replay_budget must be >= 1 when set")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.request_retries < 0:
            raise ValueError("request_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.b0 <= 0:
            raise ValueError("b0 must be > 0")


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str) -> Any:
    if raw.lower() in ("none", "null"):
        return None
    kind = _CONFIG_FIELDS[name].type
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def load_config(path: str | Path) -> dict[str, Any]:
    """Parse a key=value config file; unknown keys are rejected outright."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise StoreError(f"{path}: line {lineno} is not 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_FIELDS:
            raise StoreError(f"{path}: unknown config key {key!r} on line {lineno}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise StoreError(f"{path}: bad value for {key!r} on line {lineno}: {exc}") from exc
    return values


def merge_config(file_values: dict[str, Any] | None = None,
                 overrides: dict[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig with precedence: override > config file > default."""
    merged: dict[str, Any] = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(_CONFIG_FIELDS)
    if unknown:
        raise StoreError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)


# --- corpus statistics ----------------------------------------------------------

def dataset_stats(records: Sequence[DatasetRecord]) -> dict[str, Any]:
    """Per-domain and total counts: raw, outcomes, and annotated by method.

    Raw and annotated counts are reported side by side; no filtering rule is
    inferred between them.
    """
    domains = sorted({r.domain.value for r in records})
    per_domain: dict[str, dict[str, int]] = {}
    for name in domains + ["total"]:
        chosen = [r for r in records if name == "total" or r.domain.value == name]
        annotated = [r for r in chosen if r.annotation is not None]
        per_domain[name] = {
            "records": len(chosen),
            "successes": sum(1 for r in chosen if r.trajectory.outcome == 1),
            "failures": sum(1 for r in chosen if r.trajectory.outcome == 0),
            "annotated": len(annotated),
            "counterfactual": sum(
                1 for r in annotated if r.annotation.method is AnnotationMethod.COUNTERFACTUAL
            ),
            "injected": sum(
                1 for r in annotated if r.annotation.method is AnnotationMethod.INJECTED
            ),
        }
    return {"schema_version": SCHEMA_VERSION, "domains": per_domain}
