"""Command-line runner: task suites, failure injection, reports, traces.

Exit codes: 0 all tasks succeeded, 1 some task failed (or verification
mismatch), 2 configuration error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import importlib.resources
import json
import sys
from pathlib import Path
from typing import Optional

from .backends import HttpBackend, HttpConfig, OracleConfig, ScriptedOracle
from .errors import SdtPlanError
from .replanner import RunConfig, TaskReport, run_task
from .sdt import load_sdt
from .triplets import goal_satisfied, parse_goal
from .world import apply_perturbations, load_scene, state_from_json, state_to_json

REPORT_COLUMNS = (
    "Task ID",
    "Task Description",
    "No. Failure",
    "Iteration Per Failure",
    "Replanner Iteration",
    "Success",
)


def _data_path(relative: str) -> Path:
    return Path(str(importlib.resources.files("sdtplan.data").joinpath(relative)))


def default_suite_path() -> Path:
    return _data_path("suites/table1.json")


def default_sdt_path() -> Path:
    return _data_path("sdt.json")


def _resolve_scene(scene: str, suite_dir: Path) -> Path:
    candidate = suite_dir / scene
    if candidate.exists():
        return candidate
    packaged = _data_path(scene)
    if packaged.exists():
        return packaged
    raise FileNotFoundError(f"scene file not found: {scene}")


def load_suite(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        suite = json.load(fh)
    if "tasks" not in suite or not isinstance(suite["tasks"], list):
        raise ValueError("suite file needs a 'tasks' array")
    return suite


def _backend_for(args, faults: dict):
    if args.backend == "oracle":
        return ScriptedOracle(OracleConfig(**faults))
    if not args.endpoint:
        raise ValueError("--backend http requires --endpoint")
    return HttpBackend(
        HttpConfig(
            endpoint=args.endpoint,
            model=args.model,
            timeout=args.timeout,
            max_retries=args.max_retries,
        )
    )


def _run_row(row: dict, args, sdt, suite_dir: Path, extra_injections: list[str]) -> TaskReport:
    scene_path = _resolve_scene(row["scene"], suite_dir)
    scene = load_scene(scene_path, sdt)
    injections = list(row.get("inject", [])) + extra_injections
    scene = apply_perturbations(scene, injections, sdt)
    backend = _backend_for(args, row.get("oracle_faults", {}))
    config = RunConfig.for_mode(args.mode, budget=args.budget, replan_cap=args.replan_cap)
    report = run_task(row["task"], scene, sdt, backend, config, task_id=row.get("id"))
    return report


def _write_trace(report: TaskReport, row: dict, args, out_dir: Path) -> Path:
    payload = {
        "schema": 1,
        "task_id": report.task_id,
        "task": report.description,
        "scene": row.get("scene"),
        "inject": list(row.get("inject", [])),
        "oracle_faults": row.get("oracle_faults", {}),
        "mode": args.mode,
        **report.to_json(),
        "final_state": state_to_json(report.final_state) if report.final_state else None,
    }
    path = out_dir / f"trace_task{report.task_id}.json"
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def render_report(reports: list[TaskReport], fmt: str) -> str:
    rows = [r.to_row() for r in reports]
    if fmt == "json":
        return json.dumps(rows, indent=2)
    if fmt == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for row in rows:
            lines.append(
                ",".join('"' + str(row[c]).replace('"', '""') + '"' for c in REPORT_COLUMNS)
            )
        return "\n".join(lines)
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) if rows else len(c) for c in REPORT_COLUMNS}
    header = "| " + " | ".join(c.ljust(widths[c]) for c in REPORT_COLUMNS) + " |"
    sep = "|" + "|".join("-" * (widths[c] + 2) for c in REPORT_COLUMNS) + "|"
    lines = [header, sep]
    for row in rows:
        lines.append("| " + " | ".join(str(row[c]).ljust(widths[c]) for c in REPORT_COLUMNS) + " |")
    return "\n".join(lines)


def check_expected(report: TaskReport, expected: dict) -> list[str]:
    """Regression comparison against a suite row's recorded expectations."""
    mismatches = []
    mapping = {
        "failures": report.failures,
        "iterations": report.resolver_iterations,
        "replans": report.replanner_invocations,
        "success": report.success,
    }
    for key, want in expected.items():
        got = mapping.get(key)
        if got != want:
            mismatches.append(f"{key}: expected {want}, got {got}")
    return mismatches


def cli_run(args) -> int:
    try:
        sdt = load_sdt(args.sdt or default_sdt_path())
        suite_path = Path(args.suite) if args.suite else default_suite_path()
        suite = load_suite(suite_path)
    except (OSError, ValueError, SdtPlanError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rows = suite["tasks"]
    if args.task is not None:
        rows = [r for r in rows if str(r.get("id")) == str(args.task)]
        if not rows:
            print(f"config error: no task with id {args.task}", file=sys.stderr)
            return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    suite_dir = suite_path.parent

    def worker(row: dict) -> tuple[dict, TaskReport]:
        return row, _run_row(row, args, sdt, suite_dir, list(args.inject or [])
                             if args.task is not None else [])

    try:
        if args.jobs > 1 and len(rows) > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(worker, rows))
        else:
            results = [worker(row) for row in rows]
    except (OSError, ValueError, SdtPlanError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    def row_key(pair):
        row_id = pair[0].get("id")
        return (0, int(row_id)) if str(row_id).isdigit() else (1, str(row_id))

    results.sort(key=row_key)
    reports = []
    regression_notes = []
    for row, report in results:
        reports.append(report)
        _write_trace(report, row, args, out_dir)
        if row.get("expected") and not args.no_regression_check:
            for note in check_expected(report, row["expected"]):
                regression_notes.append(f"task {row.get('id')}: {note}")

    text = render_report(reports, args.report)
    print(text)
    report_path = out_dir / f"report.{args.report}"
    report_path.write_text(text + "\n", encoding="utf-8")
    for note in regression_notes:
        print(f"regression: {note}", file=sys.stderr)

    failed = [r for r in reports if not r.success]
    if args.lenient:
        return 0
    if failed or regression_notes:
        return 1
    return 0


# ---------------------------------------------------------------------------
# Trace rendering and verification


def _load_trace(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "history" not in data or "report" not in data:
        raise ValueError("not a trace file")
    return data


def render_trace(trace: dict) -> str:
    lines = [f"Task: {trace['task']}"]
    lines.append(f"Action-Triplets:{trace['plan']}")
    if trace.get("goal"):
        lines.append(trace["goal"])
    if trace.get("inject"):
        lines.append("Injected: " + ", ".join(trace["inject"]))
    lines.append("")
    step_no = 0
    for entry in trace["history"]:
        step_no += 1
        phase = f" ({entry['phase']})" if entry["phase"] != "plan" else ""
        outcome = entry["outcome"] or {}
        if entry["skipped"]:
            lines.append(f"Step {step_no}{phase}: {entry['triplet']} -> skipped (already satisfied)")
            continue
        shown = entry["concrete"] or entry["triplet"]
        if outcome.get("status") == "Success":
            lines.append(f"Step {step_no}{phase}: {entry['triplet']} -> Success {shown}")
        else:
            lines.append(
                f"Step {step_no}{phase}: {entry['triplet']} -> Error: \"{outcome.get('message', '')}\""
            )
        for attempt in entry.get("attempts", []):
            rendered = "[" + ",".join(attempt["proposed"]) + "]"
            lines.append(f"  Failure Resolver suggested solution actions are: {rendered}")
            lines.append(f"    => {attempt['feedback']}")
    for i, additions in enumerate(trace.get("replan_additions", []), start=1):
        lines.append(f"Replanner iteration {i} added: {additions}")
    row = trace["report"]
    lines.append("")
    lines.append(
        "Result: Success={Success} No.Failure={f} IterationPerFailure={i} ReplannerIteration={r}".format(
            Success=row["Success"],
            f=row["No. Failure"],
            i=row["Iteration Per Failure"],
            r=row["Replanner Iteration"],
        )
    )
    return "\n".join(lines)


def cli_trace(args) -> int:
    try:
        trace = _load_trace(args.trace_file)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 2
    print(render_trace(trace))
    return 0


def recompute_row(trace: dict) -> dict:
    """Report row re-derived from the trace body alone."""
    history = trace["history"]
    failures = sum(
        1
        for e in history
        if e.get("outcome") and e["outcome"]["status"] == "Error" and not e.get("skipped")
    )
    iterations = sum(len(e.get("attempts", [])) for e in history)
    replans = len(trace.get("replan_additions", []))
    success = False
    if trace.get("goal") and trace.get("final_state"):
        goal = parse_goal(trace["goal"])
        state = state_from_json(trace["final_state"])
        success = goal_satisfied(state, goal)[0]
    return {
        "No. Failure": failures,
        "Iteration Per Failure": iterations,
        "Replanner Iteration": replans,
        "Success": "Yes" if success else "No",
    }


def cli_verify(args) -> int:
    try:
        trace = _load_trace(args.trace_file)
        recomputed = recompute_row(trace)
    except (OSError, ValueError, json.JSONDecodeError, SdtPlanError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 2
    stored = trace["report"]
    mismatches = [
        f"{key}: stored {stored[key]!r}, recomputed {value!r}"
        for key, value in recomputed.items()
        if stored.get(key) != value
    ]
    if mismatches:
        for m in mismatches:
            print(f"mismatch: {m}")
        return 1
    print("trace verified: report row matches recomputation")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdtplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a task suite and emit the report")
    run.add_argument("--suite", help="suite file (default: packaged 14-task suite)")
    run.add_argument("--task", help="run a single task id from the suite")
    run.add_argument("--sdt", help="knowledge base file (default: packaged)")
    run.add_argument("--backend", choices=("oracle", "http"), default="oracle")
    run.add_argument("--endpoint", help="chat-completion URL for --backend http")
    run.add_argument("--model", default="", help="model name for --backend http")
    run.add_argument("--timeout", type=float, default=30.0)
    run.add_argument("--max-retries", type=int, default=2)
    run.add_argument(
        "--inject",
        action="append",
        metavar="KIND:ARGS",
        help="extra perturbation (dirty:X, hide:X:R, fill:R, lower:X); requires --task",
    )
    run.add_argument("--mode", choices=("plan", "resolve", "replan"), default="replan")
    run.add_argument("--budget", type=int, default=5, help="resolver iterations per failure")
    run.add_argument("--replan-cap", type=int, default=3)
    run.add_argument("--report", choices=("md", "csv", "json"), default="md")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--seed", type=int, default=0, help="reserved; runs are deterministic")
    run.add_argument("--out", default="runs", help="directory for report and trace files")
    run.add_argument("--lenient", action="store_true", help="exit 0 even when tasks fail")
    run.add_argument("--no-regression-check", action="store_true")
    run.set_defaults(func=cli_run)

    trace = sub.add_parser("trace", help="pretty-print a recorded trace file")
    trace.add_argument("trace_file")
    trace.set_defaults(func=cli_trace)

    verify = sub.add_parser("verify", help="recompute a trace's report row and compare")
    verify.add_argument("trace_file")
    verify.set_defaults(func=cli_verify)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "inject", None) and args.command == "run" and args.task is None:
        print("config error: --inject requires --task", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
