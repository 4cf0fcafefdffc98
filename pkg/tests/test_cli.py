import shutil
from pathlib import Path

import pytest

from rollupsim.cli import main
from rollupsim.formats import parse_report

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run_cli(tmp_path, name, extra=()):
    report = tmp_path / f"{name}.report"
    l1 = tmp_path / f"{name}.l1"
    code = main(
        ["run", "--scenario", str(SCENARIOS / f"{name}.scn"), "--report", str(report), "--l1-out", str(l1), *extra]
    )
    return code, report, l1


class TestRun:
    def test_pause_exploit_produces_expected_report(self, tmp_path, capsys):
        code, report_path, _ = run_cli(tmp_path, "pause_exploit")
        assert code == 0
        report = parse_report(report_path.read_text())
        assert len(report.entries) == 1
        assert report.entries[0].violated == ("vault-solvent",)
        assert "final_root" in capsys.readouterr().out

    def test_malformed_scenario_exits_2_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.scn"
        bad.write_text("scenario v1\nrun blocks=1\nevent 5 advance seconds=1\nevent 3 advance seconds=1\n")
        code = main(["run", "--scenario", str(bad), "--report", str(tmp_path / "r"), "--l1-out", str(tmp_path / "l")])
        assert code == 2
        err = capsys.readouterr().err
        assert "line 4" in err and "t=3" in err

    def test_missing_file_exits_2(self, tmp_path):
        code = main(["run", "--scenario", str(tmp_path / "nope.scn"), "--report", "r", "--l1-out", "l"])
        assert code == 2

    def test_seed_flag_changes_nothing(self, tmp_path):
        _, report_a, l1_a = run_cli(tmp_path, "flood", extra=["--seed", "1"])
        shutil.move(report_a, tmp_path / "a.report")
        _, report_b, l1_b = run_cli(tmp_path, "flood", extra=["--seed", "99"])
        assert (tmp_path / "a.report").read_bytes() == report_b.read_bytes()

    def test_repeat_runs_byte_identical(self, tmp_path):
        _, report_a, l1_a = run_cli(tmp_path, "deposit_refused")
        a_report, a_l1 = report_a.read_bytes(), l1_a.read_bytes()
        _, report_b, l1_b = run_cli(tmp_path, "deposit_refused")
        assert report_b.read_bytes() == a_report
        assert l1_b.read_bytes() == a_l1


class TestCorpusThroughCli:
    @pytest.mark.parametrize("name", sorted(p.stem for p in SCENARIOS.glob("*.scn")))
    def test_run_then_derive_matches_root(self, tmp_path, name):
        code, report_path, l1_path = run_cli(tmp_path, name)
        assert code == 0
        report = parse_report(report_path.read_text())
        assert report.l1_export == str(l1_path)
        assert main(["derive", "--l1", str(l1_path), "--expect-root", report.final_root.hex0x()]) == 0


class TestDerive:
    def test_derive_matches_reported_root(self, tmp_path, capsys):
        code, report_path, l1_path = run_cli(tmp_path, "pause_exploit")
        reported = parse_report(report_path.read_text()).final_root.hex0x()
        code = main(["derive", "--l1", str(l1_path), "--expect-root", reported])
        assert code == 0
        assert reported in capsys.readouterr().out

    def test_wrong_expected_root_exits_3(self, tmp_path):
        _, _, l1_path = run_cli(tmp_path, "single_transfer")
        code = main(["derive", "--l1", str(l1_path), "--expect-root", "0x" + "ab" * 32])
        assert code == 3

    def test_truncated_history_exits_4(self, tmp_path):
        _, _, l1_path = run_cli(tmp_path, "single_transfer")
        text = l1_path.read_text()
        (tmp_path / "cut.l1").write_text(text[: len(text) // 2])  # cut mid-record
        code = main(["derive", "--l1", str(tmp_path / "cut.l1")])
        assert code == 4

    def test_dropped_record_is_a_gap(self, tmp_path):
        _, _, l1_path = run_cli(tmp_path, "single_transfer")
        lines = l1_path.read_text().splitlines()
        without_first_record = [l for l in lines if not l.startswith("record epoch=0 l2_number=0")]
        (tmp_path / "gap.l1").write_text("\n".join(without_first_record) + "\n")
        code = main(["derive", "--l1", str(tmp_path / "gap.l1")])
        assert code == 4

    def test_unreadable_history_exits_4(self, tmp_path):
        code = main(["derive", "--l1", str(tmp_path / "missing.l1")])
        assert code == 4


class TestQuarantineInspector:
    def test_list_shows_entries(self, tmp_path, capsys):
        _, report_path, _ = run_cli(tmp_path, "pause_exploit")
        assert main(["quarantine", str(report_path), "list"]) == 0
        out = capsys.readouterr().out
        assert "kind=tx" in out and "damage=100" in out

    def test_list_on_benign_run_is_empty(self, tmp_path, capsys):
        _, report_path, _ = run_cli(tmp_path, "single_transfer")
        capsys.readouterr()  # drop the run's own output
        assert main(["quarantine", str(report_path), "list"]) == 0
        assert capsys.readouterr().out == ""

    def test_show_prints_verdict_and_trail(self, tmp_path, capsys):
        _, report_path, _ = run_cli(tmp_path, "admin_release_operator")
        report = parse_report(report_path.read_text())
        key = report.entries[0].key.hex0x()
        assert main(["quarantine", str(report_path), "show", key]) == 0
        out = capsys.readouterr().out
        assert "criterion=administrative" in out and "damage 100" in out

    def test_show_unknown_hash_exits_5(self, tmp_path):
        _, report_path, _ = run_cli(tmp_path, "pause_exploit")
        assert main(["quarantine", str(report_path), "show", "0x" + "00" * 32]) == 5

    def test_show_without_hash_exits_5(self, tmp_path):
        _, report_path, _ = run_cli(tmp_path, "pause_exploit")
        assert main(["quarantine", str(report_path), "show"]) == 5
