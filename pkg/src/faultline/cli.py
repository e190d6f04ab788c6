"""Command-line surface for the attribution pipeline.

Every subcommand is a thin wrapper over one library operation. Outputs are
JSONL/JSON files; report-style commands (score, evaluate, stats) also render
a figure next to the delimited output unless --no-figures is given.

Exit codes: 0 success; 2 usage, missing file, or invalid configuration;
1 operational failure. Failures print one machine-readable JSON line on
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import annotator, evaluator, injector, rewards, toysystems
from .gateway import ChatGateway, EndpointProfile, GatewayError
from .harness import run
from .store import (
    DatasetRecord,
    Domain,
    Provenance,
    StoreError,
    annotated_to_record,
    dataset_stats,
    load_config,
    merge_config,
    read_jsonl,
    read_records,
    read_tasks,
    write_jsonl,
    write_records,
)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _say(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, ensure_ascii=False))


def _config_from_args(args: argparse.Namespace):
    file_values = load_config(args.config) if getattr(args, "config", None) else None
    overrides = {
        key: getattr(args, attr)
        for key, attr in (
            ("lam", "lam"), ("sigma", "sigma"), ("k", "k"), ("seed", "seed"),
            ("max_steps", "max_steps"), ("retries_per_step", "retries_per_step"),
            ("max_length_ratio", "max_length_ratio"), ("replay_budget", "replay_budget"),
            ("endpoint", "endpoint"), ("model", "model"),
            ("concurrency", "concurrency"),
        )
        if hasattr(args, attr)
    }
    return merge_config(file_values, overrides)


def _profile(cfg) -> EndpointProfile:
    if not cfg.endpoint or not cfg.model:
        raise StoreError("llm backend requires endpoint and model (flag or config file)")
    return EndpointProfile(
        base_url=cfg.endpoint,
        model=cfg.model,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        retries=cfg.request_retries,
        backoff_base=cfg.backoff_base,
        timeout=cfg.request_timeout,
        credential_env=cfg.credential_env,
        seed=cfg.seed,
    )


def _gateway(args: argparse.Namespace, cfg) -> ChatGateway:
    return ChatGateway(
        _profile(cfg),
        cache_dir=getattr(args, "cache_dir", None),
        cache_mode=getattr(args, "cache_mode", "off"),
    )


def _figure_path(out: str | Path) -> Path:
    return Path(out).with_suffix(".png")


def _read_many(paths: str | Sequence[str]) -> list[DatasetRecord]:
    if isinstance(paths, str):
        paths = [paths]
    records: list[DatasetRecord] = []
    for path in paths:
        records.extend(read_records(path))
    return records


def _toy_systems_for(records: Sequence[DatasetRecord]) -> dict[str, Any]:
    systems: dict[str, Any] = {}
    for record in records:
        name = record.trajectory.system_name
        if name not in systems:
            try:
                systems[name] = toysystems.from_name(name)
            except ValueError:
                pass  # non-toy source; build_* reports it per item
    return systems


# --- subcommand handlers -------------------------------------------------------

def cmd_collect(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    bugs = [b for b in (args.bugs.split(",") if args.bugs else []) if b]
    system = toysystems.build(args.system, bugs)
    if cfg.max_steps != system.max_steps:
        system = dataclasses.replace(system, max_steps=cfg.max_steps)

    if args.tasks:
        tasks = read_tasks(args.tasks)
    else:
        tasks = toysystems.generate_tasks(args.system, args.n, cfg.seed)

    domain = Domain(args.domain or toysystems.domain_of(system.name))
    records = []
    for i, (query, ground_truth) in enumerate(tasks):
        trajectory = run(system, query, ground_truth, task_id=f"{system.name}-{cfg.seed}-{i:04d}")
        records.append(DatasetRecord(
            trajectory=trajectory,
            annotation=None,
            domain=domain,
            source_system=system.name,
            provenance=Provenance(method="collected", seed=cfg.seed, created_at=_now()),
        ))
    write_records(records, args.out)
    _say({
        "command": "collect", "out": str(args.out), "written": len(records),
        "successes": sum(1 for r in records if r.trajectory.outcome == 1),
        "failures": sum(1 for r in records if r.trajectory.outcome == 0),
    })
    return 0


def cmd_annotate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    records = _read_many(args.infile)
    failures = [r for r in records if r.trajectory.outcome == 0]
    domains = {r.trajectory.task_id: r.domain for r in records}

    if args.backend == "scripted-oracle":
        backend = toysystems.oracle_analyzer()
        backend_id = "scripted-oracle"
        workers = 1
    else:
        backend = annotator.llm_analyzer(_gateway(args, cfg))
        backend_id = f"llm:{cfg.model}"
        workers = cfg.concurrency

    config = annotator.AnnotatorConfig(
        retries_per_step=cfg.retries_per_step,
        max_length_ratio=cfg.max_length_ratio,
        replay_budget=cfg.replay_budget,
    )
    systems = _toy_systems_for(failures)
    result = annotator.build_negative_set(
        systems, [r.trajectory for r in failures], backend, config, workers=workers
    )

    out_records = [
        annotated_to_record(
            item, domains[item.trajectory.task_id],
            Provenance(method="counterfactual", seed=cfg.seed,
                       backends=(backend_id,), created_at=_now()),
        )
        for item in result.annotated
    ]
    write_records(out_records, args.out)
    summary = {
        "command": "annotate", "out": str(args.out),
        "inputs": len(failures), "annotated": len(result.annotated),
        "excluded": len(result.excluded), "failed": len(result.failed),
    }
    if args.report:
        write_jsonl(
            [{"task_id": tid, "reason": why, "kind": kind}
             for kind, pairs in (("excluded", result.excluded), ("failed", result.failed))
             for tid, why in pairs],
            args.report,
        )
        summary["report"] = str(args.report)
    _say(summary)
    return 0


def cmd_inject(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    records = _read_many(args.infile)
    successes = [r for r in records if r.trajectory.outcome == 1]
    domains = {r.trajectory.task_id: r.domain for r in records}

    if args.op == "llm":
        op = injector.llm_perturbation(_gateway(args, cfg))
    elif args.op in injector.SCRIPTED_OPERATORS:
        op = injector.SCRIPTED_OPERATORS[args.op]
    else:
        raise StoreError(
            f"unknown operator {args.op!r}; valid: {sorted(injector.SCRIPTED_OPERATORS)} or llm"
        )

    systems = _toy_systems_for(successes)
    result = injector.build_positive_set(
        systems, [r.trajectory for r in successes], op, k=cfg.k, seed=cfg.seed
    )
    out_records = [
        annotated_to_record(
            item, domains[item.trajectory.task_id],
            Provenance(method="injected", seed=cfg.seed,
                       backends=(op.name,), created_at=_now()),
        )
        for item in result.annotated
    ]
    write_records(out_records, args.out)
    _say({
        "command": "inject", "out": str(args.out),
        "inputs": len(successes), "injected": len(result.annotated),
        "unbroken": len(result.unbroken), "failed": len(result.failed),
    })
    return 0


def _score_line(line: dict[str, Any], cfg) -> dict[str, Any]:
    candidate = rewards.parse_output(str(line["raw_text"]))
    truth_agent = line["truth_agent"]
    truth_index = truth_agent if isinstance(truth_agent, int) else None
    breakdown = rewards.score_prediction(
        candidate,
        str(truth_agent),
        int(line["truth_step"]),
        truth_agent_index=truth_index,
        lam=float(line.get("lambda", cfg.lam)),
        sigma=float(line.get("sigma", cfg.sigma)),
    )
    return {
        **line,
        "format": breakdown.format,
        "agent": breakdown.agent,
        "step": breakdown.step,
        "total": breakdown.total,
    }


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    lines = read_jsonl(args.infile)
    scored = []
    for i, line in enumerate(lines, start=1):
        try:
            scored.append(_score_line(line, cfg))
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreError(f"{args.infile}: bad scoring case on line {i}: {exc}") from exc
    write_jsonl(scored, args.out)
    summary = {"command": "score", "out": str(args.out), "scored": len(scored)}
    if not args.no_figures and scored:
        from .figures import save_reward_figure

        summary["figure"] = str(save_reward_figure([s["total"] for s in scored],
                                                   _figure_path(args.out)))
    _say(summary)
    return 0


def cmd_judge(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    records = _read_many(args.infile)
    annotated = [r for r in records if r.annotation is not None]
    truths = {r.trajectory.task_id: r.annotation for r in annotated}

    if args.backend == "oracle":
        backend = evaluator.oracle_attributor(truths)
        workers = 1
    elif args.backend == "scrambled":
        backend = evaluator.scrambled_oracle(truths, seed=cfg.seed)
        workers = 1
    else:
        backend = evaluator.llm_attributor(_gateway(args, cfg))
        workers = cfg.concurrency

    setting = evaluator.EvalSetting(with_ground_truth=not args.without_ground_truth)
    items = [r.trajectory for r in annotated]
    batch = evaluator.judge_batch(backend, items, setting, workers=workers)

    out_lines = [
        {"task_id": t.task_id, "raw_text": p.raw_text}
        for t, p in zip(items, batch.predictions)
        if p is not None
    ]
    write_jsonl(out_lines, args.out)
    _say({
        "command": "judge", "out": str(args.out),
        "inputs": len(records), "skipped_unannotated": len(records) - len(annotated),
        "judged": batch.judged, "failed": len(batch.errors),
    })
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    records = _read_many(args.infile)
    truths = {
        r.trajectory.task_id: r.annotation for r in records if r.annotation is not None
    }
    predictions = read_jsonl(args.predictions)

    aligned_preds, aligned_truths, task_ids, missing = [], [], [], []
    for i, line in enumerate(predictions, start=1):
        if "task_id" not in line or "raw_text" not in line:
            raise StoreError(f"{args.predictions}: line {i} needs task_id and raw_text")
        task_id = str(line["task_id"])
        truth = truths.get(task_id)
        if truth is None:
            missing.append(task_id)
            continue
        aligned_preds.append(rewards.parse_output(str(line["raw_text"])))
        aligned_truths.append(truth)
        task_ids.append(task_id)

    result = evaluator.evaluate(aligned_preds, aligned_truths, task_ids)
    result_dict = evaluator.eval_result_to_dict(result)
    Path(args.out).write_text(
        json.dumps(result_dict, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    summary = {
        "command": "evaluate", "out": str(args.out),
        "agent_accuracy": result.agent_accuracy, "step_accuracy": result.step_accuracy,
        "n": result.n, "predictions_without_truth": len(missing),
    }
    if not args.no_figures:
        from .figures import save_eval_figure

        summary["figure"] = str(save_eval_figure(result_dict, _figure_path(args.out)))
    _say(summary)
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    records = _read_many(args.infile)
    train, test = evaluator.split(records, args.ratio, cfg.seed)
    write_records(train, args.train)
    write_records(test, args.test)
    _say({
        "command": "split", "train": str(args.train), "test": str(args.test),
        "n_train": len(train), "n_test": len(test),
    })
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    records = _read_many(args.infile)
    stats = dataset_stats(records)
    if args.out:
        Path(args.out).write_text(
            json.dumps(stats, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    if not args.no_figures and args.out:
        from .figures import save_stats_figure

        save_stats_figure(stats, _figure_path(args.out))
    _say(stats)
    return 0


def cmd_import_whowhen(args: argparse.Namespace) -> int:
    report = evaluator.import_whowhen(args.path, step_base=args.step_base)
    records = [
        annotated_to_record(
            item, Domain(args.domain),
            Provenance(method="imported", created_at=_now(),
                       extra=dict(report.provenance)),
        )
        for item in report.items
    ]
    write_records(records, args.out)
    _say({
        "command": "import-whowhen", "out": str(args.out),
        "imported": len(records), "skipped": len(report.skipped),
        "step_base": args.step_base,
    })
    for source_id, reason in report.skipped:
        print(f"skipped {source_id}: {reason}", file=sys.stderr)
    return 0


def cmd_bridge(args: argparse.Namespace) -> int:
    """Line-delimited JSON scoring loop on stdin/stdout for external trainers."""
    cfg = _config_from_args(args)
    for raw_line in sys.stdin:
        if not raw_line.strip():
            continue
        try:
            request = json.loads(raw_line)
            response = _score_line(request, cfg)
            response = {k: response[k] for k in ("format", "agent", "step", "total")}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            response = {"error": f"{type(exc).__name__}: {exc}"}
        sys.stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        sys.stdout.flush()
    return 0


# --- parser ------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=int, default=None, help="run seed")


def _add_llm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", default=None, help="chat-completions base URL")
    p.add_argument("--model", default=None, help="model name at the endpoint")
    p.add_argument("--concurrency", type=int, default=None)
    p.add_argument("--cache-dir", default=None, help="replay cache directory")
    p.add_argument("--cache-mode", choices=("off", "readwrite", "readonly"), default="off")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultline",
        description="Failure attribution pipeline for turn-based multi-agent systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run a toy system over tasks into a record file")
    p.add_argument("--system", required=True, choices=toysystems.KINDS)
    p.add_argument("--bugs", default="", help="comma-separated bug switches")
    p.add_argument("--tasks", default=None, help="task file (JSONL: query, ground_truth)")
    p.add_argument("--n", type=int, default=50, help="generate this many tasks instead")
    p.add_argument("--out", required=True)
    p.add_argument("--domain", choices=[d.value for d in Domain], default=None)
    p.add_argument("--max-steps", type=int, default=None, dest="max_steps")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_collect)

    p = sub.add_parser("annotate", help="locate decisive errors in failed trajectories")
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="scripted-oracle", choices=("scripted-oracle", "llm"))
    p.add_argument("--report", default=None, help="write excluded/failed items here")
    p.add_argument("--retries-per-step", type=int, default=None, dest="retries_per_step")
    p.add_argument("--max-length-ratio", type=float, default=None, dest="max_length_ratio")
    p.add_argument("--replay-budget", type=int, default=None, dest="replay_budget")
    _add_config_flags(p)
    _add_llm_flags(p)
    p.set_defaults(handler=cmd_annotate)

    p = sub.add_parser("inject", help="fault-inject successes into labeled failures")
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--op", default="numeric_flip",
                   help=f"perturbation: {sorted(injector.SCRIPTED_OPERATORS)} or llm")
    p.add_argument("--k", type=int, default=None, help="injection points per trajectory")
    _add_config_flags(p)
    _add_llm_flags(p)
    p.set_defaults(handler=cmd_inject)

    p = sub.add_parser("score", help="batch-score raw attribution outputs")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", type=float, default=None, dest="lam",
                   help="step-reward weight in [0, 1]")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("judge", help="run an attributor over annotated trajectories")
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="oracle", choices=("oracle", "scrambled", "llm"))
    p.add_argument("--without-ground-truth", action="store_true",
                   help="judge without showing the ground truth")
    _add_config_flags(p)
    _add_llm_flags(p)
    p.set_defaults(handler=cmd_judge)

    p = sub.add_parser("evaluate", help="agent/step accuracy of a predictions file")
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("split", help="deterministic stratified train/test split")
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--ratio", type=float, default=0.9, help="train fraction in (0, 1)")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    _add_config_flags(p)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("stats", help="domain/outcome/annotation counts of a record file")
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--out", default=None, help="also write the counts as JSON here")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("import-whowhen", help="convert benchmark records to the store schema")
    p.add_argument("--path", required=True, help="benchmark file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--step-base", type=int, default=0, choices=(0, 1), dest="step_base",
                   help="subtract this from mistake_step labels")
    p.add_argument("--domain", choices=[d.value for d in Domain], default="agentic")
    p.set_defaults(handler=cmd_import_whowhen)

    p = sub.add_parser("bridge", help="stdin/stdout line-JSON scoring bridge")
    _add_config_flags(p)
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(handler=cmd_bridge)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return args.handler(args)
    except (StoreError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(json.dumps({"error": "usage", "detail": str(exc)}), file=sys.stderr)
        return 2
    except (GatewayError, annotator.AnnotatorError, evaluator.JudgeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
