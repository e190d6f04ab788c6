from __future__ import annotations

import json
import math
import subprocess
import sys

import pytest

from faultline.cli import main
from faultline.store import read_jsonl, read_records, write_jsonl


def run_cli(*argv: str) -> int:
    return main(list(argv))


@pytest.fixture
def collected(tmp_path):
    out = tmp_path / "arith.jsonl"
    code = run_cli("collect", "--system", "arith", "--bugs", "drop_carry",
                   "--n", "30", "--seed", "11", "--out", str(out))
    assert code == 0
    return out


def test_collect_writes_valid_records(collected):
    records = read_records(collected)
    assert len(records) == 30
    assert {r.trajectory.system_name for r in records} == {"arith[drop_carry]"}
    assert all(r.annotation is None for r in records)
    assert 0 < sum(r.trajectory.outcome for r in records) < 30  # mixed corpus


def test_collect_from_task_file(tmp_path):
    tasks = tmp_path / "tasks.jsonl"
    write_jsonl([{"query": "17+25", "ground_truth": "42"}], tasks)
    out = tmp_path / "out.jsonl"
    assert run_cli("collect", "--system", "arith", "--tasks", str(tasks),
                   "--out", str(out)) == 0
    records = read_records(out)
    assert len(records) == 1 and records[0].trajectory.outcome == 1


def test_annotate_happy_path(tmp_path, collected, capsys):
    out = tmp_path / "dneg.jsonl"
    code = run_cli("annotate", "--in", str(collected),
                   "--backend", "scripted-oracle", "--out", str(out))
    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    records = read_records(out)
    assert summary["annotated"] == len(records) > 0
    assert all(r.annotation is not None and r.trajectory.outcome == 0 for r in records)
    assert all(r.provenance.method == "counterfactual" for r in records)


def test_inject_happy_path(tmp_path, collected):
    out = tmp_path / "dpos.jsonl"
    assert run_cli("inject", "--in", str(collected), "--op", "numeric_flip",
                   "--k", "3", "--seed", "5", "--out", str(out)) == 0
    records = read_records(out)
    assert records
    assert all(r.trajectory.outcome == 0 and r.annotation is not None for r in records)
    assert all(r.provenance.method == "injected" for r in records)


def test_score_computes_reward_fields(tmp_path):
    cases = tmp_path / "cases.jsonl"
    write_jsonl([
        {"raw_text": "<think>x</think><answer>Solver | 2</answer>",
         "truth_agent": "Solver", "truth_step": 2},
        {"raw_text": "<think>x</think><answer>Solver | 3</answer>",
         "truth_agent": "Solver", "truth_step": 2},
        {"raw_text": "no tags", "truth_agent": "Solver", "truth_step": 2},
    ], cases)
    out = tmp_path / "scored.jsonl"
    assert run_cli("score", "--in", str(cases), "--out", str(out), "--no-figures") == 0
    scored = read_jsonl(out)
    assert scored[0]["total"] == 1.0
    assert scored[1]["total"] == pytest.approx(0.5 + 0.5 * math.exp(-0.5), rel=1e-12)
    assert scored[2] == {**scored[2], "format": 0, "total": 0.0}


def test_score_rejects_out_of_range_lambda(tmp_path, capsys):
    cases = tmp_path / "cases.jsonl"
    write_jsonl([{"raw_text": "x", "truth_agent": "A", "truth_step": 0}], cases)
    code = run_cli("score", "--in", str(cases), "--out", str(tmp_path / "s.jsonl"),
                   "--lambda", "1.5")
    assert code == 2
    assert "usage" in capsys.readouterr().err


def test_score_renders_figure_next_to_output(tmp_path):
    cases = tmp_path / "cases.jsonl"
    write_jsonl([{"raw_text": "<think>x</think><answer>A | 0</answer>",
                  "truth_agent": "A", "truth_step": 0}], cases)
    out = tmp_path / "scored.jsonl"
    assert run_cli("score", "--in", str(cases), "--out", str(out)) == 0
    assert (tmp_path / "scored.png").exists()


def test_unknown_flag_and_missing_file_exit_2(tmp_path):
    assert run_cli("stats", "--no-such-flag") == 2
    assert run_cli("stats", "--in", str(tmp_path / "missing.jsonl")) == 2
    assert run_cli("collect", "--system", "nope", "--out", "x.jsonl") == 2


def test_judge_evaluate_round_trip(tmp_path, collected, capsys):
    dneg = tmp_path / "dneg.jsonl"
    preds = tmp_path / "preds.jsonl"
    results = tmp_path / "results.json"
    assert run_cli("annotate", "--in", str(collected), "--out", str(dneg)) == 0
    assert run_cli("judge", "--in", str(dneg), "--backend", "oracle",
                   "--out", str(preds)) == 0
    assert run_cli("evaluate", "--in", str(dneg), "--predictions", str(preds),
                   "--out", str(results)) == 0
    payload = json.loads(results.read_text())
    assert payload["agent_accuracy"] == 1.0 and payload["step_accuracy"] == 1.0
    assert (tmp_path / "results.png").exists()
    lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert lines[-1]["n"] == payload["n"] > 0


def test_split_and_stats(tmp_path, collected, capsys):
    dneg = tmp_path / "dneg.jsonl"
    assert run_cli("annotate", "--in", str(collected), "--out", str(dneg)) == 0
    train, test = tmp_path / "train.jsonl", tmp_path / "test.jsonl"
    assert run_cli("split", "--in", str(dneg), "--ratio", "0.8", "--seed", "2",
                   "--train", str(train), "--test", str(test)) == 0
    n_train, n_test = len(read_records(train)), len(read_records(test))
    n_all = len(read_records(dneg))
    assert n_train + n_test == n_all and n_test >= 1

    stats_out = tmp_path / "stats.json"
    assert run_cli("stats", "--in", str(train), "--in", str(test),
                   "--out", str(stats_out)) == 0
    stats = json.loads(stats_out.read_text())
    assert stats["domains"]["total"]["records"] == n_all
    assert stats["domains"]["total"]["annotated"] == n_all
    assert run_cli("split", "--in", str(dneg), "--ratio", "1.5",
                   "--train", str(train), "--test", str(test)) == 2


def test_import_whowhen_subcommand(tmp_path):
    bench = tmp_path / "bench.json"
    bench.write_text(json.dumps([{
        "id": "w-1", "question": "q", "ground_truth": "g", "is_correct": False,
        "mistake_agent": "Coder", "mistake_step": 0,
        "history": [{"name": "Coder", "content": "bad code"}],
    }]), encoding="utf-8")
    out = tmp_path / "imported.jsonl"
    assert run_cli("import-whowhen", "--path", str(bench), "--out", str(out)) == 0
    records = read_records(out)
    assert len(records) == 1
    assert records[0].provenance.method == "imported"
    assert records[0].provenance.extra["step_base"] == 0


def test_bridge_scores_lines_and_survives_malformed_requests():
    requests = "\n".join([
        json.dumps({"raw_text": "<think>x</think><answer>Solver | 2</answer>",
                    "truth_agent": "Solver", "truth_step": 2}),
        "this is not json",
        json.dumps({"raw_text": "<think>x</think><answer>Solver | 3</answer>",
                    "truth_agent": "Solver", "truth_step": 2, "lambda": 0.5, "sigma": 1.0}),
    ]) + "\n"
    proc = subprocess.run(
        [sys.executable, "-m", "faultline.cli", "bridge"],
        input=requests, capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    lines = [json.loads(l) for l in proc.stdout.strip().splitlines()]
    assert lines[0] == {"format": 1, "agent": 1, "step": 1.0, "total": 1.0}
    assert "error" in lines[1]
    assert lines[2]["total"] == pytest.approx(0.5 + 0.5 * math.exp(-0.5), rel=1e-12)
