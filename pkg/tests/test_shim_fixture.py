"""The published scoring fixture must match the live scorer exactly.

The bridge shim's conformance suite compares its subprocess results against
shim/fixtures/scoring_cases.jsonl; this guard pins that file to the current
reward implementation so neither side can drift unnoticed.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from faultline.rewards import parse_output, score_prediction
from faultline.store import read_jsonl

FIXTURE = Path(__file__).resolve().parent.parent / "shim" / "fixtures" / "scoring_cases.jsonl"


@pytest.fixture(scope="module")
def cases():
    assert FIXTURE.exists(), f"missing published fixture {FIXTURE}"
    loaded = read_jsonl(FIXTURE)
    assert len(loaded) == 200
    return loaded


def test_fixture_matches_live_scoring_bit_for_bit(cases):
    for i, case in enumerate(cases):
        request, expected = case["request"], case["expected"]
        truth_agent = request["truth_agent"]
        breakdown = score_prediction(
            parse_output(str(request["raw_text"])),
            str(truth_agent),
            int(request["truth_step"]),
            truth_agent_index=truth_agent if isinstance(truth_agent, int) else None,
            lam=float(request.get("lambda", 0.5)),
            sigma=float(request.get("sigma", 1.0)),
        )
        got = {
            "format": breakdown.format,
            "agent": breakdown.agent,
            "step": breakdown.step,
            "total": breakdown.total,
        }
        assert got == expected, f"fixture case {i} drifted: {got} != {expected}"


def test_fixture_covers_both_gate_outcomes(cases):
    formats = {case["expected"]["format"] for case in cases}
    assert formats == {0, 1}
