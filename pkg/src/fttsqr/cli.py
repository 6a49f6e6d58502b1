"""Command-line harness: single runs, schedule sweeps, report verification.

Reports are machine-readable (JSON by default, CSV for spreadsheets) and
deterministic: identical arguments produce byte-identical output except
for the wall_time_ms field. Floats are rendered with 18 significant
digits so every value round-trips exactly.
"""

from __future__ import annotations

import argparse
import itertools
import json
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import tsqr
from .densela import (
    Matrix,
    TriangularFactor,
    dump_matrix_csv,
    load_matrix_csv,
    mat_random,
    rel_residual,
)
from .errors import DefectError, FtTsqrError
from .simnet import FailureEvent, Phase
from .tsqr import AlgorithmKind, RunConfig, RunReport

__all__ = [
    "RunCommand",
    "SweepCommand",
    "VerifyCommand",
    "CliCommand",
    "parse_schedule",
    "format_schedule",
    "parse_args",
    "execute",
    "exit_code_for_report",
    "main",
    "SCHEMA_VERSION",
    "EXIT_OK",
    "EXIT_DEFECT",
    "EXIT_DATA_LOSS",
    "EXIT_IO",
]

SCHEMA_VERSION = "ft-tsqr/1"

EXIT_OK = 0
EXIT_DEFECT = 1
EXIT_DATA_LOSS = 2
EXIT_IO = 3

_EVENT_RE = re.compile(r"^(\d+)@(\d+)(?::(before|after))?$")


@dataclass(frozen=True)
class RunCommand:
    algorithm: AlgorithmKind
    procs: int
    rows: int | None
    cols: int | None
    seed: int
    failures: tuple[FailureEvent, ...]
    tol: float
    out: str | None
    fmt: str
    dump_matrix: str | None
    input_matrix: str | None


@dataclass(frozen=True)
class SweepCommand:
    algorithm: AlgorithmKind
    procs: int
    rows: int
    cols: int
    seed: int
    max_failures: int
    tol: float
    out: str | None
    fmt: str


@dataclass(frozen=True)
class VerifyCommand:
    report: str
    matrix: str
    out: str | None


CliCommand = RunCommand | SweepCommand | VerifyCommand


# -- schedule text form ---------------------------------------------------


def parse_schedule(text: str) -> tuple[FailureEvent, ...]:
    """Parse `rank@step[:before|:after]` events, comma-separated.

    The phase defaults to `after`. Whitespace anywhere is malformed.
    """
    if text == "":
        return ()
    events = []
    for token in text.split(","):
        m = _EVENT_RE.match(token)
        if m is None:
            raise ValueError(f"malformed failure event {token!r}")
        phase = Phase.BEFORE_EXCHANGE if m.group(3) == "before" else Phase.AFTER_EXCHANGE
        events.append(FailureEvent(rank=int(m.group(1)), step=int(m.group(2)), phase=phase))
    return tuple(events)


def format_schedule(events: Sequence[FailureEvent]) -> str:
    return ",".join(f"{e.rank}@{e.step}:{e.phase.value}" for e in events)


# -- argument parsing ------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fttsqr",
        description="Fault-tolerant tall-and-skinny QR factorization on a simulated runtime.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--algorithm",
            choices=[k.value for k in AlgorithmKind],
            default=AlgorithmKind.REDUNDANT.value,
        )
        p.add_argument("--procs", type=int, required=True, help="process count, power of two")
        p.add_argument("--seed", type=int, required=True, help="unsigned 64-bit generator seed")
        p.add_argument("--tol", type=float, default=1e-10, help="relative residual bound")
        p.add_argument("--out", default=None, help="report path (default: stdout)")
        p.add_argument("--format", dest="fmt", choices=["json", "csv"], default="json")

    p_run = sub.add_parser("run", help="execute a single simulated factorization")
    add_common(p_run)
    p_run.add_argument("--rows", type=int, default=None, help="global row count")
    p_run.add_argument("--cols", type=int, default=None, help="column count")
    p_run.add_argument("--failures", default="", help="schedule, e.g. 2@0:after,1@1:before")
    p_run.add_argument("--dump-matrix", default=None, help="write the input matrix as CSV")
    p_run.add_argument("--input-matrix", default=None, help="load the input matrix from CSV")

    p_sweep = sub.add_parser("sweep", help="run every schedule up to a failure-count bound")
    add_common(p_sweep)
    p_sweep.add_argument("--rows", type=int, required=True)
    p_sweep.add_argument("--cols", type=int, required=True)
    p_sweep.add_argument("--max-failures", type=int, default=2)

    p_verify = sub.add_parser("verify", help="recompute residuals from a report and a matrix")
    p_verify.add_argument("--report", required=True, help="JSON report from a run")
    p_verify.add_argument("--matrix", required=True, help="matrix CSV dumped alongside the run")
    p_verify.add_argument("--out", default=None)
    return parser


def parse_args(argv: Sequence[str]) -> CliCommand:
    """Turn argv into a validated command; bad usage exits nonzero."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.command == "verify":
        return VerifyCommand(report=ns.report, matrix=ns.matrix, out=ns.out)

    p = ns.procs
    if p < 1 or p & (p - 1):
        parser.error(f"--procs must be a power of two, got {p}")
    if not 0 <= ns.seed < 2**64:
        parser.error(f"--seed must be an unsigned 64-bit integer, got {ns.seed}")
    if ns.tol <= 0:
        parser.error(f"--tol must be positive, got {ns.tol}")

    def check_shape(rows: int, cols: int) -> None:
        if cols < 1:
            parser.error(f"--cols must be positive, got {cols}")
        if rows % p:
            parser.error(f"--rows {rows} is not divisible by --procs {p}")
        if rows // p < cols:
            parser.error(f"blocks of {rows // p} rows are too short for {cols} columns")

    if ns.command == "sweep":
        check_shape(ns.rows, ns.cols)
        if ns.max_failures < 0:
            parser.error("--max-failures must be nonnegative")
        return SweepCommand(
            algorithm=AlgorithmKind(ns.algorithm),
            procs=p,
            rows=ns.rows,
            cols=ns.cols,
            seed=ns.seed,
            max_failures=ns.max_failures,
            tol=ns.tol,
            out=ns.out,
            fmt=ns.fmt,
        )

    try:
        failures = parse_schedule(ns.failures)
    except ValueError as exc:
        parser.error(str(exc))
    rounds = p.bit_length() - 1
    for ev in failures:
        if not 0 <= ev.rank < p:
            parser.error(f"failure rank {ev.rank} out of range for --procs {p}")
        if not 0 <= ev.step < rounds:
            parser.error(f"failure step {ev.step} out of range, valid steps are [0, {rounds})")
    if ns.input_matrix is None:
        if ns.rows is None or ns.cols is None:
            parser.error("--rows and --cols are required unless --input-matrix is given")
        check_shape(ns.rows, ns.cols)
    elif ns.rows is not None and ns.cols is not None:
        check_shape(ns.rows, ns.cols)
    return RunCommand(
        algorithm=AlgorithmKind(ns.algorithm),
        procs=p,
        rows=ns.rows,
        cols=ns.cols,
        seed=ns.seed,
        failures=failures,
        tol=ns.tol,
        out=ns.out,
        fmt=ns.fmt,
        dump_matrix=ns.dump_matrix,
        input_matrix=ns.input_matrix,
    )


# -- report documents ------------------------------------------------------


def _render_json(value, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        body = ",\n".join(
            f"{pad}  {json.dumps(str(k))}: {_render_json(v, indent + 1)}" for k, v in value.items()
        )
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        body = ",\n".join(f"{pad}  {_render_json(v, indent + 1)}" for v in value)
        return "[\n" + body + "\n" + pad + "]"
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        # 18 significant digits: parses back to the identical double and
        # never collapses to fewer digits the way %g would for e.g. 0.0
        return format(value, ".17e")
    return json.dumps(value)


def render_document(doc: dict) -> str:
    return _render_json(doc) + "\n"


def _report_section(report: RunReport) -> dict:
    ranks = [
        {
            "rank": o.rank,
            "status": o.status.value,
            "step": o.step,
            "holds_final": o.holds_final,
            "residual": o.residual,
        }
        for o in report.ranks
    ]
    final = None
    if report.final_factor is not None:
        final = [list(row) for row in report.final_factor.mat.array]
    return {
        "rounds": report.rounds,
        "budget_ok": report.budget_ok,
        "data_loss": report.data_loss,
        "respawns": report.respawns,
        "holders": list(report.holders),
        "ranks": ranks,
        "final_r": final,
    }


def build_run_document(cmd: RunCommand, config: RunConfig, report: RunReport, wall_ms: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "run",
        "config": {
            "algorithm": config.algorithm.value,
            "procs": config.procs,
            "rows": config.rows,
            "cols": config.cols,
            "seed": config.seed,
            "failures": format_schedule(config.schedule),
            "tol": config.tol,
            "input_matrix": cmd.input_matrix,
        },
        "result": _report_section(report),
        "wall_time_ms": wall_ms,
    }


def _run_report_csv(config: RunConfig, report: RunReport) -> str:
    header = (
        "schema_version,command,algorithm,procs,rows,cols,seed,tol,failures,"
        "rounds,budget_ok,data_loss,respawns,rank,status,step,holds_final,residual"
    )
    prefix = ",".join(
        [
            SCHEMA_VERSION,
            "run",
            config.algorithm.value,
            str(config.procs),
            str(config.rows),
            str(config.cols),
            str(config.seed),
            format(config.tol, ".17e"),
            '"' + format_schedule(config.schedule) + '"',
            str(report.rounds),
            str(report.budget_ok).lower(),
            str(report.data_loss).lower(),
            str(report.respawns),
        ]
    )
    lines = [header]
    for o in report.ranks:
        residual = "" if o.residual is None else format(o.residual, ".17e")
        lines.append(
            f"{prefix},{o.rank},{o.status.value},{o.step},{str(o.holds_final).lower()},{residual}"
        )
    return "\n".join(lines) + "\n"


# -- sweep -----------------------------------------------------------------


def enumerate_schedules(procs: int, max_failures: int) -> list[tuple[FailureEvent, ...]]:
    """Every schedule of up to max_failures distinct events, in a fixed order."""
    rounds = procs.bit_length() - 1
    universe = [
        FailureEvent(rank=r, step=s, phase=ph)
        for s in range(rounds)
        for ph in (Phase.BEFORE_EXCHANGE, Phase.AFTER_EXCHANGE)
        for r in range(procs)
    ]
    schedules: list[tuple[FailureEvent, ...]] = []
    for size in range(max_failures + 1):
        schedules.extend(itertools.combinations(universe, size))
    return schedules


def _sweep_documents(cmd: SweepCommand) -> tuple[dict, list[dict], int]:
    schedules = enumerate_schedules(cmd.procs, cmd.max_failures)
    rows: list[dict] = []
    counts = {
        "budget_ok_nonempty": 0,
        "budget_ok_empty": 0,
        "over_budget_nonempty": 0,
        "over_budget_empty": 0,
    }
    violations: list[str] = []
    for schedule in schedules:
        config = RunConfig(
            algorithm=cmd.algorithm,
            procs=cmd.procs,
            rows=cmd.rows,
            cols=cmd.cols,
            seed=cmd.seed,
            schedule=schedule,
            tol=cmd.tol,
        )
        report = tsqr.run(config)
        nonempty = bool(report.holders)
        key = ("budget_ok" if report.budget_ok else "over_budget") + (
            "_nonempty" if nonempty else "_empty"
        )
        counts[key] += 1
        if report.budget_ok and not nonempty:
            violations.append(format_schedule(schedule))
        rows.append(
            {
                "failures": format_schedule(schedule),
                "budget_ok": report.budget_ok,
                "holders": list(report.holders),
                "data_loss": report.data_loss,
                "respawns": report.respawns,
            }
        )
    result = {
        "schedules": len(schedules),
        "counts": counts,
        "violations": violations,
        "runs": rows,
    }
    exit_code = EXIT_DEFECT if violations else EXIT_OK
    return result, rows, exit_code


def build_sweep_document(cmd: SweepCommand, result: dict, wall_ms: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "sweep",
        "config": {
            "algorithm": cmd.algorithm.value,
            "procs": cmd.procs,
            "rows": cmd.rows,
            "cols": cmd.cols,
            "seed": cmd.seed,
            "max_failures": cmd.max_failures,
            "tol": cmd.tol,
        },
        "result": result,
        "wall_time_ms": wall_ms,
    }


def _sweep_csv(cmd: SweepCommand, rows: list[dict]) -> str:
    header = "schema_version,command,algorithm,procs,failures,budget_ok,holders,data_loss,respawns"
    lines = [header]
    for row in rows:
        holders = ";".join(str(h) for h in row["holders"])
        lines.append(
            ",".join(
                [
                    SCHEMA_VERSION,
                    "sweep",
                    cmd.algorithm.value,
                    str(cmd.procs),
                    '"' + row["failures"] + '"',
                    str(row["budget_ok"]).lower(),
                    '"' + holders + '"',
                    str(row["data_loss"]).lower(),
                    str(row["respawns"]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


# -- execution ---------------------------------------------------------------


def exit_code_for_report(report: RunReport, tol: float) -> int:
    """0 iff some rank finished and every finisher passed the residual bound;
    2 for an unrecoverable failure pattern; 1 for anything that should not
    happen."""
    if report.holders:
        residuals = [o.residual for o in report.ranks if o.holds_final]
        if all(r is not None and r <= tol for r in residuals):
            return EXIT_OK
        return EXIT_DEFECT
    return EXIT_DATA_LOSS if report.data_loss else EXIT_DEFECT


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _execute_run(cmd: RunCommand) -> int:
    rows, cols = cmd.rows, cmd.cols
    if cmd.input_matrix is not None:
        matrix = load_matrix_csv(cmd.input_matrix)
        rows = matrix.rows if rows is None else rows
        cols = matrix.cols if cols is None else cols
    else:
        matrix = mat_random(rows, cols, cmd.seed)
    config = RunConfig(
        algorithm=cmd.algorithm,
        procs=cmd.procs,
        rows=rows,
        cols=cols,
        seed=cmd.seed,
        schedule=cmd.failures,
        tol=cmd.tol,
    )
    start = time.perf_counter()
    report = tsqr.run(config, matrix=matrix)
    wall_ms = (time.perf_counter() - start) * 1000.0
    if cmd.dump_matrix is not None:
        dump_matrix_csv(matrix, cmd.dump_matrix)
    if cmd.fmt == "csv":
        text = _run_report_csv(config, report)
    else:
        text = render_document(build_run_document(cmd, config, report, wall_ms))
    _emit(text, cmd.out)
    return exit_code_for_report(report, cmd.tol)


def _execute_sweep(cmd: SweepCommand) -> int:
    start = time.perf_counter()
    result, rows, exit_code = _sweep_documents(cmd)
    wall_ms = (time.perf_counter() - start) * 1000.0
    if cmd.fmt == "csv":
        text = _sweep_csv(cmd, rows)
    else:
        text = render_document(build_sweep_document(cmd, result, wall_ms))
    _emit(text, cmd.out)
    return exit_code


def _execute_verify(cmd: VerifyCommand) -> int:
    doc = json.loads(Path(cmd.report).read_text())
    matrix = load_matrix_csv(cmd.matrix)
    result = doc["result"]
    tol = float(doc["config"]["tol"])
    holders = result["holders"]
    checks = []
    ok = True
    if holders:
        if result["final_r"] is None:
            ok = False
            checks.append({"check": "final_r_present", "ok": False})
        else:
            factor = TriangularFactor(Matrix(result["final_r"]))
            recomputed = rel_residual(matrix, factor)
            stored = [o["residual"] for o in result["ranks"] if o["holds_final"]]
            agree = all(s is not None and abs(s - recomputed) <= 1e-9 for s in stored)
            within = recomputed <= tol
            ok = agree and within
            checks.append({"check": "residual_recomputed", "value": recomputed, "ok": within})
            checks.append({"check": "residual_matches_report", "ok": agree})
    else:
        checks.append({"check": "no_holders_to_verify", "ok": True})
    verdict = {
        "schema_version": SCHEMA_VERSION,
        "command": "verify",
        "report": cmd.report,
        "matrix": cmd.matrix,
        "checks": checks,
        "ok": ok,
    }
    _emit(render_document(verdict), cmd.out)
    return EXIT_OK if ok else EXIT_DEFECT


def execute(cmd: CliCommand) -> int:
    """Run a parsed command; returns the process exit code."""
    try:
        if isinstance(cmd, RunCommand):
            return _execute_run(cmd)
        if isinstance(cmd, SweepCommand):
            return _execute_sweep(cmd)
        return _execute_verify(cmd)
    except DefectError as exc:
        print(f"defect: {exc}", file=sys.stderr)
        return EXIT_DEFECT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FtTsqrError, ValueError, KeyError) as exc:
        # Config mistakes that argparse could not see (e.g. a matrix file
        # whose shape breaks the block constraints) mirror usage errors.
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv: Sequence[str] | None = None) -> int:
    cmd = parse_args(sys.argv[1:] if argv is None else list(argv))
    return execute(cmd)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
