"""Multi-granular attribution reward and group-relative policy-gradient math.

Pure functions only: structured-output parsing with a hard format gate, the
agent/step reward combination, group advantage normalization, the linearly
decaying clip schedule, and the clipped surrogate term. No sampling and no
gradients live here; a training stack calls in through the batch-scoring
file format or the stdin/stdout bridge.
"""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass
from typing import Sequence

from .trajectory import Annotation

DEFAULT_STEP_WEIGHT = 0.5   # weight on the step-level reward (the lambda knob)
DEFAULT_SIGMA = 1.0         # width of the step-proximity kernel
DEFAULT_EPSILON = 1e-6      # guard added to the group std before dividing


@dataclass(frozen=True)
class AttributionPrediction:
    """A candidate answer: the blamed agent (name or index text) and step."""

    agent: str
    step: int


@dataclass(frozen=True)
class CandidateOutput:
    """One raw model emission plus its parse under the strict tag grammar."""

    raw_text: str
    parsed: AttributionPrediction | None
    format_ok: int


@dataclass(frozen=True)
class RewardBreakdown:
    """Components of the gated reward for one candidate.

    total = format * (lam * step + (1 - lam) * agent), always in [0, 1].
    """

    format: int
    agent: int
    step: float
    total: float
    lam: float
    sigma: float


@dataclass(frozen=True)
class RolloutGroup:
    """A group of candidates for one trajectory with rewards and advantages."""

    candidates: tuple[CandidateOutput, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    epsilon: float = DEFAULT_EPSILON


@dataclass(frozen=True)
class ClipSchedule:
    """Linear decay of the policy-ratio clip bound to a floor of 0.2*b0."""

    b0: float
    total_steps: int

    def __post_init__(self) -> None:
        if self.b0 <= 0:
            raise ValueError("b0 must be > 0")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


# Tags may arrive with ASCII or angle-quote brackets; normalize before parsing.
_TAG_ALIASES = {
    "⟨think⟩": "<think>", "⟨/think⟩": "</think>",
    "⟨answer⟩": "<answer>", "⟨/answer⟩": "</answer>",
}
_OUTPUT_RE = re.compile(
    r"\A\s*<think>(?P<think>.*)</think>\s*<answer>(?P<answer>.*)</answer>\s*\Z",
    re.DOTALL,
)
_STEP_RE = re.compile(r"\A[+-]?\d+\Z")


def parse_output(raw_text: str) -> CandidateOutput:
    """Parse a model emission under the strict think/answer grammar.

    format_ok is 1 iff the text is exactly one think block followed by one
    answer block (nothing else outside them) and the answer body reads as
    ``agentID | stepID``. Total function: malformed text yields format_ok 0
    with parsed absent.
    """
    text = raw_text
    for alias, tag in _TAG_ALIASES.items():
        text = text.replace(alias, tag)

    if any(text.count(tag) != 1 for tag in ("<think>", "</think>", "<answer>", "</answer>")):
        return CandidateOutput(raw_text, None, 0)
    m = _OUTPUT_RE.match(text)
    if not m:
        return CandidateOutput(raw_text, None, 0)

    answer = m.group("answer")
    if answer.count("|") != 1:
        return CandidateOutput(raw_text, None, 0)
    agent_part, step_part = (part.strip() for part in answer.split("|"))
    if not agent_part or not _STEP_RE.match(step_part):
        return CandidateOutput(raw_text, None, 0)
    return CandidateOutput(raw_text, AttributionPrediction(agent_part, int(step_part)), 1)


def agent_matches(predicted: str, truth_name: str, truth_index: int | None = None) -> bool:
    """Name match after case-folding and trimming, with roster-index fallback."""
    if predicted.strip().casefold() == truth_name.strip().casefold():
        return True
    if truth_index is not None:
        try:
            return int(predicted.strip()) == truth_index
        except ValueError:
            return False
    return False


def step_reward(predicted_step: int, truth_step: int, sigma: float) -> float:
    """Gaussian proximity kernel: 1 at the true step, decaying with distance."""
    delta = predicted_step - truth_step
    return math.exp(-(delta * delta) / (2.0 * sigma * sigma))


def score_prediction(candidate: CandidateOutput, truth_agent: str, truth_step: int,
                     *, truth_agent_index: int | None = None,
                     lam: float = DEFAULT_STEP_WEIGHT,
                     sigma: float = DEFAULT_SIGMA) -> RewardBreakdown:
    """Score one candidate against a known decisive error.

    The format gate dominates: an unparseable emission earns 0 regardless of
    content. Otherwise the agent reward is exact-match binary and the step
    reward decays smoothly with distance from the true step.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")

    if not candidate.format_ok or candidate.parsed is None:
        return RewardBreakdown(format=0, agent=0, step=0.0, total=0.0, lam=lam, sigma=sigma)

    agent = 1 if agent_matches(candidate.parsed.agent, truth_agent, truth_agent_index) else 0
    step = step_reward(candidate.parsed.step, truth_step, sigma)
    total = lam * step + (1.0 - lam) * agent
    return RewardBreakdown(format=1, agent=agent, step=step, total=total, lam=lam, sigma=sigma)


def score(candidate: CandidateOutput, truth: Annotation,
          lam: float = DEFAULT_STEP_WEIGHT, sigma: float = DEFAULT_SIGMA) -> RewardBreakdown:
    """Score a candidate against a trajectory annotation."""
    return score_prediction(
        candidate, truth.agent.name, truth.step,
        truth_agent_index=truth.agent.index, lam=lam, sigma=sigma,
    )


def advantages(rewards: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> list[float]:
    """Group-relative advantages: (r - mean) / (population std + epsilon).

    A constant group yields exact zeros; the epsilon guard keeps everything
    finite without special-casing.
    """
    if not rewards:
        raise ValueError("rewards must be non-empty")
    mean = statistics.fmean(rewards)
    std = statistics.pstdev(rewards)
    return [(r - mean) / (std + epsilon) for r in rewards]


def build_rollout_group(candidates: Sequence[CandidateOutput], truth: Annotation,
                        *, lam: float = DEFAULT_STEP_WEIGHT, sigma: float = DEFAULT_SIGMA,
                        epsilon: float = DEFAULT_EPSILON) -> RolloutGroup:
    """Score a group of candidates for one trajectory and normalize in-group."""
    rewards = tuple(score(c, truth, lam, sigma).total for c in candidates)
    return RolloutGroup(
        candidates=tuple(candidates),
        rewards=rewards,
        advantages=tuple(advantages(rewards, epsilon)),
        epsilon=epsilon,
    )


def clip_bound(schedule: ClipSchedule, s: int) -> float:
    """Clip bound at training step s: max(0.2*b0, b0*(1 - s/total_steps))."""
    if not 0 <= s <= schedule.total_steps:
        raise ValueError(f"step {s} outside [0, {schedule.total_steps}]")
    return max(0.2 * schedule.b0, schedule.b0 * (1.0 - s / schedule.total_steps))


def surrogate_term(ratio: float, advantage: float, bound: float) -> float:
    """Clipped surrogate for one candidate: min(r*A, clip(r, 1-b, 1+b)*A)."""
    if not 0.0 < bound < 1.0:
        raise ValueError(f"bound must be in (0, 1), got {bound}")
    clipped = min(max(ratio, 1.0 - bound), 1.0 + bound)
    return min(ratio * advantage, clipped * advantage)


def surrogate_loss(ratios: Sequence[float], advs: Sequence[float], bound: float) -> float:
    """Negated group mean of the clipped surrogate terms (the objective value)."""
    if len(ratios) != len(advs):
        raise ValueError("ratios and advantages must be aligned")
    if not ratios:
        raise ValueError("group must be non-empty")
    total = sum(surrogate_term(r, a, bound) for r, a in zip(ratios, advs))
    return -total / len(ratios)
