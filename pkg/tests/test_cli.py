import json
import re

import pytest

from fttsqr import cli
from fttsqr.cli import (
    EXIT_DATA_LOSS,
    EXIT_DEFECT,
    EXIT_IO,
    EXIT_OK,
    RunCommand,
    SweepCommand,
    VerifyCommand,
    enumerate_schedules,
    format_schedule,
    parse_args,
    parse_schedule,
)
from fttsqr.simnet import FailureEvent, Phase


# -- schedule grammar -----------------------------------------------------


def test_parse_schedule_full_form():
    events = parse_schedule("2@0:after,1@1:before")
    assert events == (
        FailureEvent(2, 0, Phase.AFTER_EXCHANGE),
        FailureEvent(1, 1, Phase.BEFORE_EXCHANGE),
    )


def test_parse_schedule_phase_defaults_to_after():
    assert parse_schedule("2@0") == (FailureEvent(2, 0, Phase.AFTER_EXCHANGE),)


def test_parse_schedule_empty_string():
    assert parse_schedule("") == ()


@pytest.mark.parametrize(
    "text",
    ["2@", "@0", "2@0:sometime", "2@0 ,1@1", " 2@0", "2@0;1@1", "2@0:after,", "a@0"],
)
def test_parse_schedule_rejects_malformed(text):
    with pytest.raises(ValueError):
        parse_schedule(text)


def test_format_schedule_round_trips():
    text = "2@0:after,1@1:before"
    assert format_schedule(parse_schedule(text)) == text


# -- parse_args -----------------------------------------------------------------


RUN_ARGS = ["run", "--algorithm", "redundant", "--procs", "4", "--rows", "64",
            "--cols", "4", "--seed", "7", "--failures", "2@0:after"]


def test_parse_args_run():
    cmd = parse_args(RUN_ARGS)
    assert isinstance(cmd, RunCommand)
    assert cmd.procs == 4
    assert cmd.failures == (FailureEvent(2, 0, Phase.AFTER_EXCHANGE),)
    assert cmd.tol == 1e-10
    assert cmd.fmt == "json"


def test_parse_args_sweep():
    cmd = parse_args(["sweep", "--algorithm", "replace", "--procs", "8", "--rows", "64",
                      "--cols", "2", "--seed", "3", "--max-failures", "2"])
    assert isinstance(cmd, SweepCommand)
    assert cmd.max_failures == 2


def test_parse_args_verify():
    cmd = parse_args(["verify", "--report", "r.json", "--matrix", "m.csv"])
    assert isinstance(cmd, VerifyCommand)


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--procs", "3", "--rows", "63", "--cols", "4", "--seed", "7"],
        ["run", "--procs", "4", "--rows", "63", "--cols", "4", "--seed", "7"],
        ["run", "--procs", "4", "--rows", "8", "--cols", "4", "--seed", "7"],
        ["run", "--procs", "4", "--rows", "64", "--cols", "4", "--seed", "7",
         "--failures", "9@0"],
        ["run", "--procs", "4", "--rows", "64", "--cols", "4", "--seed", "7",
         "--failures", "1@7"],
        ["run", "--procs", "4", "--rows", "64", "--cols", "4", "--seed", "7",
         "--failures", "nope"],
        ["run", "--procs", "4", "--seed", "7"],  # rows/cols missing
        ["run", "--procs", "4", "--rows", "64", "--cols", "4", "--seed", "-1"],
        ["run", "--procs", "4", "--rows", "64", "--cols", "4", "--seed", "7", "--bogus"],
        ["bogus-subcommand"],
    ],
)
def test_parse_args_usage_errors_exit_nonzero(argv):
    with pytest.raises(SystemExit) as exc:
        parse_args(argv)
    assert exc.value.code != 0


# -- run execution ------------------------------------------------------------------


def run_cli(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr().out


def test_run_json_report(capsys):
    code, out = run_cli(RUN_ARGS, capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["schema_version"] == "ft-tsqr/1"
    assert doc["config"]["failures"] == "2@0:after"
    assert doc["result"]["holders"] == [1, 3]
    assert doc["result"]["budget_ok"] is True
    statuses = {r["rank"]: r["status"] for r in doc["result"]["ranks"]}
    assert statuses == {0: "returned", 1: "alive", 2: "failed", 3: "alive"}
    for r in doc["result"]["ranks"]:
        if r["holds_final"]:
            assert r["residual"] <= 1e-10
    assert len(doc["result"]["final_r"]) == 4


def test_run_report_written_to_file(tmp_path, capsys):
    out_path = tmp_path / "report.json"
    code, out = run_cli(RUN_ARGS + ["--out", str(out_path)], capsys)
    assert code == EXIT_OK
    assert out == ""
    assert json.loads(out_path.read_text())["result"]["holders"] == [1, 3]


def test_run_exit_codes_by_scenario(capsys):
    ok, _ = run_cli(["run", "--algorithm", "baseline", "--procs", "4", "--rows", "64",
                     "--cols", "4", "--seed", "7"], capsys)
    assert ok == EXIT_OK
    loss, out = run_cli(["run", "--algorithm", "redundant", "--procs", "4", "--rows", "64",
                         "--cols", "4", "--seed", "7",
                         "--failures", "2@0:before,3@0:before"], capsys)
    assert loss == EXIT_DATA_LOSS
    doc = json.loads(out)  # the report is still written
    assert doc["result"]["data_loss"] is True
    assert doc["result"]["holders"] == []


def test_run_single_process_trivial_topology(capsys):
    code, out = run_cli(["run", "--algorithm", "selfheal", "--procs", "1", "--rows", "16",
                         "--cols", "4", "--seed", "3"], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["result"]["holders"] == [0]
    assert doc["result"]["rounds"] == 0


def test_run_csv_report_one_row_per_rank(capsys):
    code, out = run_cli(RUN_ARGS + ["--format", "csv"], capsys)
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert len(lines) == 1 + 4
    assert lines[0].startswith("schema_version,command,algorithm")
    assert lines[2].split(",")[13] == "1"  # rank column of the second data row


def test_run_report_round_trips_losslessly(capsys):
    _, first = run_cli(RUN_ARGS, capsys)
    doc = json.loads(first)
    rendered = cli.render_document(doc)
    assert json.loads(rendered) == doc


def test_report_floats_carry_17_significant_digits(capsys):
    _, out = run_cli(RUN_ARGS, capsys)
    for line in out.splitlines():
        if '"residual":' in line and "null" not in line:
            digits = re.sub(r"\D", "", line.split(":")[1].split("e")[0])
            assert len(digits) >= 17, line


def test_run_determinism_excluding_wall_time(capsys):
    _, a = run_cli(RUN_ARGS, capsys)
    _, b = run_cli(RUN_ARGS, capsys)
    da, db = json.loads(a), json.loads(b)
    da.pop("wall_time_ms"), db.pop("wall_time_ms")
    assert cli.render_document(da) == cli.render_document(db)


def test_run_dump_and_reload_matrix(tmp_path, capsys):
    dump = tmp_path / "a.csv"
    _, seeded = run_cli(RUN_ARGS + ["--dump-matrix", str(dump)], capsys)
    code, reloaded = run_cli(
        ["run", "--algorithm", "redundant", "--procs", "4", "--seed", "7",
         "--failures", "2@0:after", "--input-matrix", str(dump)],
        capsys,
    )
    assert code == EXIT_OK
    assert json.loads(seeded)["result"]["final_r"] == json.loads(reloaded)["result"]["final_r"]


def test_run_input_matrix_shape_must_fit_topology(tmp_path, capsys):
    dump = tmp_path / "a.csv"
    run_cli(["run", "--procs", "2", "--rows", "6", "--cols", "3", "--seed", "1",
             "--dump-matrix", str(dump)], capsys)
    code = cli.main(["run", "--procs", "4", "--seed", "1", "--input-matrix", str(dump)])
    capsys.readouterr()
    assert code != EXIT_OK


def test_run_out_to_missing_directory_is_io_error(capsys):
    code = cli.main(RUN_ARGS + ["--out", "/nonexistent-dir/report.json"])
    capsys.readouterr()
    assert code == EXIT_IO


# -- sweep -------------------------------------------------------------------------


def test_enumerate_schedules_counts():
    assert len(enumerate_schedules(2, 2)) == 1 + 4 + 6
    assert len(enumerate_schedules(4, 2)) == 1 + 16 + 120
    assert len(enumerate_schedules(8, 1)) == 1 + 48


def test_enumerate_schedules_unique():
    scheds = enumerate_schedules(4, 2)
    assert len(set(scheds)) == len(scheds)


def test_sweep_reports_aggregate_and_no_violations(capsys):
    code, out = run_cli(
        ["sweep", "--algorithm", "redundant", "--procs", "2", "--rows", "8",
         "--cols", "2", "--seed", "11", "--max-failures", "2"],
        capsys,
    )
    assert code == EXIT_OK
    doc = json.loads(out)
    result = doc["result"]
    assert result["schedules"] == 11
    assert sum(result["counts"].values()) == 11
    assert result["counts"]["budget_ok_empty"] == 0
    assert result["violations"] == []
    assert len(result["runs"]) == 11


def test_sweep_csv_one_row_per_schedule(capsys):
    code, out = run_cli(
        ["sweep", "--algorithm", "selfheal", "--procs", "2", "--rows", "8",
         "--cols", "2", "--seed", "11", "--max-failures", "1", "--format", "csv"],
        capsys,
    )
    assert code == EXIT_OK
    assert len(out.strip().splitlines()) == 1 + 5


# -- verify ------------------------------------------------------------------------


def make_run_artifacts(tmp_path, capsys):
    report = tmp_path / "report.json"
    matrix = tmp_path / "a.csv"
    code, _ = run_cli(RUN_ARGS + ["--out", str(report), "--dump-matrix", str(matrix)], capsys)
    assert code == EXIT_OK
    return report, matrix


def test_verify_accepts_faithful_report(tmp_path, capsys):
    report, matrix = make_run_artifacts(tmp_path, capsys)
    code, out = run_cli(["verify", "--report", str(report), "--matrix", str(matrix)], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["ok"] is True


def test_verify_rejects_tampered_residual(tmp_path, capsys):
    report, matrix = make_run_artifacts(tmp_path, capsys)
    doc = json.loads(report.read_text())
    for rank in doc["result"]["ranks"]:
        if rank["holds_final"]:
            rank["residual"] = 0.5
    report.write_text(cli.render_document(doc))
    code, out = run_cli(["verify", "--report", str(report), "--matrix", str(matrix)], capsys)
    assert code == EXIT_DEFECT
    assert json.loads(out)["ok"] is False


def test_verify_rejects_tampered_factor(tmp_path, capsys):
    report, matrix = make_run_artifacts(tmp_path, capsys)
    doc = json.loads(report.read_text())
    doc["result"]["final_r"][0][0] *= 1.5
    report.write_text(cli.render_document(doc))
    code, out = run_cli(["verify", "--report", str(report), "--matrix", str(matrix)], capsys)
    assert code == EXIT_DEFECT


def test_verify_on_empty_holder_report_passes_vacuously(tmp_path, capsys):
    report = tmp_path / "report.json"
    matrix = tmp_path / "a.csv"
    run_cli(["run", "--procs", "4", "--rows", "64", "--cols", "4", "--seed", "7",
             "--failures", "2@0:before,3@0:before", "--out", str(report),
             "--dump-matrix", str(matrix)], capsys)
    code, out = run_cli(["verify", "--report", str(report), "--matrix", str(matrix)], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["checks"][0]["check"] == "no_holders_to_verify"


def test_verify_missing_report_is_io_error(tmp_path, capsys):
    code = cli.main(["verify", "--report", str(tmp_path / "nope.json"),
                     "--matrix", str(tmp_path / "nope.csv")])
    capsys.readouterr()
    assert code == EXIT_IO
