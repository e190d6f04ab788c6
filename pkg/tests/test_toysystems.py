from __future__ import annotations

import pytest

from faultline import toysystems
from faultline.harness import run
from faultline.trajectory import validate_trajectory


@pytest.mark.parametrize("kind", toysystems.KINDS)
def test_healthy_systems_solve_their_own_tasks(kind):
    system = toysystems.build(kind)
    for query, truth in toysystems.generate_tasks(kind, 25, seed=100):
        t = run(system, query, truth)
        assert t.outcome == 1, (query, truth, t.final_answer)
        assert validate_trajectory(t) == []


@pytest.mark.parametrize("kind", toysystems.KINDS)
def test_every_bug_switch_produces_some_failures(kind):
    for bug in sorted(toysystems.BUGS[kind]):
        system = toysystems.build(kind, [bug])
        tasks = toysystems.generate_tasks(kind, 40, seed=7)
        outcomes = [run(system, q, g).outcome for q, g in tasks]
        assert 0 in outcomes, f"{kind}[{bug}] never failed"


def test_task_generators_are_deterministic():
    for kind in toysystems.KINDS:
        assert toysystems.generate_tasks(kind, 30, seed=5) == toysystems.generate_tasks(kind, 30, seed=5)
        assert toysystems.generate_tasks(kind, 30, seed=5) != toysystems.generate_tasks(kind, 30, seed=6)


def test_system_names_round_trip_through_parse():
    name = toysystems.system_name("arith", ["drop_carry", "swap_operands"])
    assert name == "arith[drop_carry,swap_operands]"
    kind, bugs = toysystems.parse_system_name(name)
    assert kind == "arith" and bugs == frozenset({"drop_carry", "swap_operands"})
    assert toysystems.from_name(name).name == name
    assert toysystems.healthy_twin(name).name == "arith"


def test_unknown_kind_and_bugs_are_rejected():
    with pytest.raises(ValueError):
        toysystems.build("unknown")
    with pytest.raises(ValueError):
        toysystems.build("arith", ["not_a_bug"])
    with pytest.raises(ValueError):
        toysystems.parse_system_name("nosuch[bug]")


def test_domains_cover_the_three_benchmark_labels():
    assert {toysystems.domain_of(k) for k in toysystems.KINDS} == {"math", "coding", "agentic"}


def test_lookup_feedback_flags_price_mismatch():
    system = toysystems.build("lookup", ["wrong_row"])
    t = run(system, "total price of 3 apples", "9")
    assert t.steps[0].feedback is not None
    assert "mismatch" in t.steps[0].feedback
    healthy = run(toysystems.build("lookup"), "total price of 3 apples", "9")
    assert "ok" in healthy.steps[0].feedback
