from __future__ import annotations

import pytest

from faultline import toysystems
from faultline.annotator import (
    AnnotatorConfig,
    BackendFailure,
    ReplayBudgetExceeded,
    annotate_failure,
    assemble_feedback,
    build_negative_set,
)
from faultline.gateway import TransportError
from faultline.harness import brute_force_decisive, oracle_fixes, run
from faultline.trajectory import AnnotationMethod, active_agent


def test_oracle_backend_matches_brute_force(carry_system, carry_failure, healthy_arith):
    report = annotate_failure(carry_system, carry_failure, toysystems.oracle_analyzer())
    expected = brute_force_decisive(
        carry_system, carry_failure, oracle_fixes(healthy_arith, carry_failure)
    )
    assert report.result is not None
    assert (report.result.agent, report.result.step) == expected
    assert report.result.method is AnnotationMethod.COUNTERFACTUAL
    assert report.result.corrected_action == "42"


def test_failure_at_step_zero_takes_one_replay():
    system = toysystems.build("lookup", ["wrong_row"])
    t = run(system, "total price of 3 apples", "9")
    report = annotate_failure(system, t, toysystems.oracle_analyzer())
    assert report.result is not None and report.result.step == 0
    assert report.budget_spent.replays == 1


def test_identity_backend_finds_nothing_and_covers_all_steps(carry_system, carry_failure):
    identity = lambda t, step, feedback, ground_truth: t.steps[step].action
    report = annotate_failure(carry_system, carry_failure, identity)
    assert report.result is None
    assert sorted({a.step for a in report.attempts}) == [0, 1, 2]
    # duplicate proposals within a step are not replayed twice
    assert report.budget_spent.replays == 3
    assert report.budget_spent.backend_calls == 6


def test_attempts_scan_monotonically_and_stop_on_success(carry_system, carry_failure):
    report = annotate_failure(carry_system, carry_failure, toysystems.oracle_analyzer())
    steps = [a.step for a in report.attempts]
    assert steps == sorted(steps)
    assert report.result.step == min(
        a.step for a in report.attempts if a.replay_outcome == 1
    )
    assert steps[-1] == report.result.step  # nothing probed after the hit


def test_agent_consistency(carry_system, carry_failure):
    report = annotate_failure(carry_system, carry_failure, toysystems.oracle_analyzer())
    assert report.result.agent == active_agent(carry_failure, report.result.step)


def test_preconditions(carry_system, healthy_arith, arith_success, carry_failure):
    with pytest.raises(ValueError):
        annotate_failure(healthy_arith, arith_success, toysystems.oracle_analyzer())
    stripped = type(carry_failure)(**{**carry_failure.__dict__, "ground_truth": None})
    with pytest.raises(ValueError):
        annotate_failure(carry_system, stripped, toysystems.oracle_analyzer())


def test_overlong_proposals_are_rejected_before_replay(carry_system, carry_failure):
    verbose = lambda t, step, feedback, ground_truth: "x" * 500
    report = annotate_failure(carry_system, carry_failure, verbose,
                              AnnotatorConfig(max_length_ratio=4.0))
    assert report.result is None
    assert report.budget_spent.replays == 0
    assert all(a.replay_outcome is None for a in report.attempts)


def test_replay_budget_error_carries_partial_attempts(carry_system, carry_failure):
    wrong = lambda t, step, feedback, ground_truth: "999"
    with pytest.raises(ReplayBudgetExceeded) as exc_info:
        annotate_failure(carry_system, carry_failure, wrong,
                         AnnotatorConfig(replay_budget=2))
    assert len(exc_info.value.attempts) == 2
    assert exc_info.value.budget_spent.replays == 2


def test_backend_transport_failure_carries_partial_attempts(carry_system, carry_failure):
    calls = {"n": 0}

    def flaky(t, step, feedback, ground_truth):
        calls["n"] += 1
        if step >= 1:
            raise TransportError("endpoint down")
        return t.steps[step].action

    with pytest.raises(BackendFailure) as exc_info:
        annotate_failure(carry_system, carry_failure, flaky)
    assert all(a.step == 0 for a in exc_info.value.attempts)
    assert exc_info.value.budget_spent.backend_calls == calls["n"]


def test_assemble_feedback_concatenates_step_and_trajectory_levels():
    system = toysystems.build("lookup", ["wrong_row"])
    t = run(system, "total price of 3 apples", "9")
    t = type(t)(**{**t.__dict__, "feedback_log": "run aborted by proctor"})
    text = assemble_feedback(t)
    assert "step 0:" in text and "mismatch" in text
    assert "trajectory: run aborted by proctor" in text


def test_build_negative_set_reports_unfixable_and_bad_items(carry_system):
    tasks = toysystems.generate_tasks("arith", 30, seed=21)
    failures = [
        t for q, g in tasks
        if (t := run(carry_system, q, g, task_id=f"case-{q}")).outcome == 0
    ]
    assert len(failures) >= 10

    # one unfixable item from a double-bugged system, plus one unknown system
    double = toysystems.build("arith", ["swap_operands", "no_borrow"])
    unfixable = run(double, "41-17", "24", task_id="unfixable")
    stranger = type(unfixable)(**{**unfixable.__dict__, "system_name": "martian",
                                  "task_id": "stray"})

    systems = {carry_system.name: carry_system, double.name: double}
    result = build_negative_set(
        systems, failures + [unfixable, stranger], toysystems.oracle_analyzer()
    )
    assert len(result.annotated) == len(failures)
    assert [tid for tid, _ in result.excluded] == ["unfixable"]
    assert [tid for tid, _ in result.failed] == ["stray"]
    healthy = toysystems.build("arith")
    for item in result.annotated:
        expected = brute_force_decisive(
            carry_system, item.trajectory, oracle_fixes(healthy, item.trajectory)
        )
        assert (item.annotation.agent, item.annotation.step) == expected


def test_build_negative_set_empty_input():
    result = build_negative_set({}, [], toysystems.oracle_analyzer())
    assert result.annotated == [] and result.excluded == [] and result.failed == []


def test_config_validation():
    with pytest.raises(ValueError):
        AnnotatorConfig(retries_per_step=0)
    with pytest.raises(ValueError):
        AnnotatorConfig(max_length_ratio=0)
    with pytest.raises(ValueError):
        AnnotatorConfig(replay_budget=0)


def test_llm_backend_budget_accounting_matches_gateway_usage(carry_system, healthy_arith):
    """Gateway call totals must equal the sum of per-item backend_call counts."""
    import json

    from faultline.annotator import llm_analyzer
    from faultline.gateway import ChatGateway, EndpointProfile
    from faultline.harness import scripted_action

    class OracleTransport:
        """Answers every completion with the healthy twin's action for the step."""

        def __call__(self, url, payload, headers, timeout):
            prompt = payload["messages"][-1]["content"]
            step = int(prompt.split("Focus on step ", 1)[1].split(",", 1)[0])
            task_id = prompt.split("Task: ", 1)[1].splitlines()[0].strip()
            action = scripted_action(healthy_arith, trajectories[task_id], step)
            body = json.dumps({
                "choices": [{"message": {"content": f"<action>{action}</action>"}}],
                "usage": {"prompt_tokens": 1, "completion_tokens": 1},
            })
            return 200, body

    tasks = toysystems.generate_tasks("arith", 15, seed=77)
    trajectories = {}
    for i, (q, g) in enumerate(tasks):
        t = run(carry_system, q, g, task_id=f"acct-{i}")
        if t.outcome == 0:
            trajectories[t.task_id] = t
    assert trajectories

    gw = ChatGateway(
        EndpointProfile(base_url="https://mock.test/v1", model="analyzer-1"),
        transport=OracleTransport(),
    )
    result = build_negative_set(
        {carry_system.name: carry_system}, trajectories.values(), llm_analyzer(gw)
    )
    assert len(result.annotated) == len(trajectories)
    assert gw.usage.calls == sum(r.budget_spent.backend_calls for r in result.reports.values())
