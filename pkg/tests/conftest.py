from __future__ import annotations

import pytest

from faultline import toysystems
from faultline.harness import BoundAgent, SystemSpec, run
from faultline.trajectory import AgentId


@pytest.fixture
def carry_system():
    """Arithmetic pipeline whose solver drops carries."""
    return toysystems.build("arith", ["drop_carry"])


@pytest.fixture
def carry_failure(carry_system):
    """The 17+25 task under the carry bug: fails with final answer 32."""
    t = run(carry_system, "17+25", "42")
    assert t.outcome == 0 and t.final_answer == "32"
    return t


@pytest.fixture
def healthy_arith():
    return toysystems.build("arith")


@pytest.fixture
def arith_success(healthy_arith):
    t = run(healthy_arith, "17+25", "42")
    assert t.outcome == 1
    return t


def single_agent_system(name: str, reply: str, evaluator=None) -> SystemSpec:
    """One-step system for degenerate-shape tests."""
    agent = AgentId(0, "Echo")
    return SystemSpec(
        name=name,
        roster=(BoundAgent(agent, lambda query, history, feedback: reply),),
        scheduler=lambda t, history: agent,
        stop_condition=lambda history: len(history) >= 1,
        evaluator=evaluator or (lambda answer, truth: 1 if answer == truth else 0),
    )
