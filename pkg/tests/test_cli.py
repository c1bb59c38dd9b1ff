"""Command-line behavior: subcommands, exit codes, output streams."""

import json

import pytest

from gridaudit.cli import run
from gridaudit.grid import parse_snapshot_file

SNAP_1 = """SNAP1\twb1\t2024-03-01T09:00:00Z\talice
S\tA1\tV\tN\t5
S\tB1\tV\tN\t10
"""

SNAP_2 = """SNAP1\twb1\t2024-03-02T09:00:00Z\tbob
S\tA1\tV\tN\t6
S\tB1\tV\tN\t10
"""

SNAP_DEEP_IF = """SNAP1\twb1\t2024-03-01T09:00:00Z\talice
S\tA1\tF\t=IF(A2,IF(B2,IF(C2,IF(D2,1,0),0),0),0)
"""

SNAP_ERROR_VALUE = """SNAP1\twb1\t2024-03-01T09:00:00Z\talice
S\tA1\tV\tE\t#REF!
"""

POLICY = """workbook = wb1

[region]
range = S!A1:A9
mode = LOCKED
"""


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, text in {
        "s1.snap": SNAP_1,
        "s2.snap": SNAP_2,
        "deep.snap": SNAP_DEEP_IF,
        "err.snap": SNAP_ERROR_VALUE,
        "policy.txt": POLICY,
    }.items():
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        paths[name] = str(p)
    paths["ledger"] = str(tmp_path / "ledger")
    return paths


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert run(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_flag(self, capsys):
        assert run(["verify", "somewhere", "--fast"]) == 2

    def test_help_exits_zero(self, capsys):
        assert run(["--help"]) == 0
        assert "gridaudit" in capsys.readouterr().out

    def test_missing_file(self, capsys, files):
        assert run(["audit", files["s1.snap"] + ".nope"]) == 2
        assert "error" in capsys.readouterr().err


class TestAudit:
    def test_warning_findings_exit_zero(self, capsys, files):
        assert run(["audit", files["deep.snap"]]) == 0
        out = capsys.readouterr().out
        assert out.startswith("warning\tDEEP_NESTING\tS!A1\t")

    def test_critical_findings_exit_one(self, capsys, files):
        assert run(["audit", files["err.snap"]]) == 1
        assert "ERROR_VALUE" in capsys.readouterr().out

    def test_clean_snapshot_silent(self, capsys, files):
        assert run(["audit", files["s1.snap"]]) == 0
        assert capsys.readouterr().out == ""


class TestIngest:
    def test_sequence_and_locked_region(self, capsys, files):
        assert run(["ingest", files["ledger"], files["s1.snap"], "--policy", files["policy.txt"]]) == 0
        assert capsys.readouterr().out == ""
        code = run(["ingest", files["ledger"], files["s2.snap"], "--policy", files["policy.txt"]])
        out = capsys.readouterr().out
        assert code == 1
        assert "critical\tLOCKED_REGION_CHANGE\tS!A1" in out

    def test_non_monotonic_timestamp_exits_two(self, capsys, files):
        assert run(["ingest", files["ledger"], files["s2.snap"]]) == 0
        assert run(["ingest", files["ledger"], files["s1.snap"]]) == 2
        assert "error" in capsys.readouterr().err

    def test_malformed_snapshot_exits_two(self, tmp_path, capsys, files):
        bad = tmp_path / "bad.snap"
        bad.write_text("not a snapshot\n")
        assert run(["ingest", files["ledger"], str(bad)]) == 2


class TestVerify:
    def test_ok_output(self, capsys, files):
        run(["ingest", files["ledger"], files["s1.snap"]])
        run(["ingest", files["ledger"], files["s2.snap"]])
        capsys.readouterr()
        assert run(["verify", files["ledger"]]) == 0
        assert capsys.readouterr().out == "OK n=4\n"

    def test_tampered_ledger_exits_three(self, capsys, files, tmp_path):
        run(["ingest", files["ledger"], files["s1.snap"]])
        run(["ingest", files["ledger"], files["s2.snap"]])
        log = tmp_path / "ledger" / "ledger.log"
        lines = log.read_text().split("\n")
        lines[0] = lines[0][:-1] + ("0" if lines[0][-1] != "0" else "1")
        log.write_text("\n".join(lines))
        capsys.readouterr()
        assert run(["verify", files["ledger"]]) == 3
        assert capsys.readouterr().out == "FAIL seq=0 n=4\n"


class TestQueries:
    def _seed(self, files):
        run(["ingest", files["ledger"], files["s1.snap"]])
        run(["ingest", files["ledger"], files["s2.snap"]])

    def test_diff_output(self, capsys, files):
        assert run(["diff", files["s1.snap"], files["s2.snap"]]) == 0
        out = capsys.readouterr().out
        assert out == "DataChanged\tS!A1\t5\t6\n"

    def test_history(self, capsys, files):
        self._seed(files)
        capsys.readouterr()
        assert run(["history", files["ledger"], "S!A1"]) == 0
        out = capsys.readouterr().out
        assert out == "2024-03-02T09:00:00Z\tbob\tDataChanged\t5\t6\n"

    def test_trend_insufficient_data(self, capsys, files):
        self._seed(files)
        capsys.readouterr()
        assert run(["trend", files["ledger"], "S!B1"]) == 0
        out = capsys.readouterr().out.split("\n")
        assert out[-2] == "TREND\tinsufficient-data"

    def test_trend_with_history(self, capsys, files, tmp_path):
        ledger_dir = str(tmp_path / "trend-ledger")
        for day, value in enumerate([10, 12, 11, 13, 10, 30], start=1):
            snap_file = tmp_path / f"t{day}.snap"
            snap_file.write_text(
                f"SNAP1\twb1\t2024-03-{day:02d}T09:00:00Z\talice\nS\tB2\tV\tN\t{value}\n"
            )
            run(["ingest", ledger_dir, str(snap_file)])
        capsys.readouterr()
        assert run(["trend", ledger_dir, "S!B2"]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert len(out) == 7
        assert out[-1] == "TREND\tmean=11.200000\tstddev=1.303840\tz=14.418942\tviolated=true"

    def test_profile(self, capsys, files):
        self._seed(files)
        capsys.readouterr()
        assert run(["profile", files["ledger"]]) == 0
        out = dict(
            line.split("\t", 1) for line in capsys.readouterr().out.strip().split("\n")
            if not line.startswith("rationale")
        )
        assert out["workbook"] == "wb1"
        assert out["ingests"] == "2"
        assert out["distinct_actors"] == "2"
        assert out["classification"] == "Operational"

    def test_check_reevaluates_latest_delta(self, capsys, files):
        self._seed(files)
        capsys.readouterr()
        assert run(["check", files["ledger"], "--policy", files["policy.txt"]]) == 1
        assert "LOCKED_REGION_CHANGE" in capsys.readouterr().out

    def test_check_without_changesets(self, capsys, files):
        run(["ingest", files["ledger"], files["s1.snap"]])
        capsys.readouterr()
        assert run(["check", files["ledger"], "--policy", files["policy.txt"]]) == 2


class TestReport:
    def _seed(self, files):
        run(["ingest", files["ledger"], files["s1.snap"], "--policy", files["policy.txt"]])
        run(["ingest", files["ledger"], files["s2.snap"], "--policy", files["policy.txt"]])

    ARGS = [
        "--from", "2024-03-01T00:00:00Z",
        "--to", "2024-03-31T00:00:00Z",
        "--generated-at", "2024-04-01T00:00:00Z",
    ]

    def test_report_exit_one_on_material_weakness(self, capsys, files):
        self._seed(files)
        capsys.readouterr()
        code = run(["report", files["ledger"], "--policy", files["policy.txt"], *self.ARGS])
        out = capsys.readouterr().out
        assert code == 1
        assert "LOCKED_REGION_CHANGE" in out

    def test_report_written_to_file_and_deterministic(self, capsys, files, tmp_path):
        self._seed(files)
        out_a = tmp_path / "a.txt"
        out_b = tmp_path / "b.txt"
        run(["report", files["ledger"], "--policy", files["policy.txt"], *self.ARGS, "--out", str(out_a)])
        run(["report", files["ledger"], "--policy", files["policy.txt"], *self.ARGS, "--out", str(out_b)])
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_json_format(self, capsys, files):
        self._seed(files)
        capsys.readouterr()
        run(["report", files["ledger"], "--policy", files["policy.txt"], *self.ARGS, "--format", "json"])
        doc = json.loads(capsys.readouterr().out)
        assert doc["workbook_id"] == "wb1"
        assert doc["findings_by_section"]["103"]

    def test_empty_ledger_exits_two(self, capsys, files, tmp_path):
        empty = str(tmp_path / "fresh")
        assert run(["report", empty, "--policy", files["policy.txt"], *self.ARGS]) == 2
