"""run_sweeps.py: the batch file -> sgp.py argv contract."""

import sys

import run_sweeps


def test_parse_command_line_skips_comments_and_blanks():
    assert run_sweeps.parse_command_line("# pit pipeline") is None
    assert run_sweeps.parse_command_line("   ") is None


def test_parse_command_line_splits_like_a_shell():
    parsed = run_sweeps.parse_command_line('sweep --grid "0,0.1,inf" --env pit')
    assert parsed == ["sweep", "--grid", "0,0.1,inf", "--env", "pit"]


def test_load_commands_skips_unbalanced_quotes(tmp_path):
    p = tmp_path / "batch.txt"
    p.write_text('# header\ngen-data --env pit\n\nplan --method "sgp\ntrain-score --env pit\n')
    assert run_sweeps.load_commands(str(p)) == [
        ["gen-data", "--env", "pit"],
        ["train-score", "--env", "pit"],
    ]


def test_build_command_passes_the_log_level_unless_given():
    cmd = run_sweeps.build_command(["plan"], "DEBUG")
    assert cmd[0] == sys.executable and cmd[1].endswith("sgp.py")
    assert cmd[2:] == ["plan", "--log-level", "DEBUG"]
    explicit = run_sweeps.build_command(["plan", "--log-level", "ERROR"], "DEBUG")
    assert explicit[2:] == ["plan", "--log-level", "ERROR"]


def test_main_stops_at_the_first_failure(tmp_path, monkeypatch):
    p = tmp_path / "batch.txt"
    p.write_text("gen-data\ntrain-dynamics\nplan\n")
    calls = []

    def fake_run(args, log_level):
        calls.append(args[0])
        return 2 if args[0] == "train-dynamics" else 0

    monkeypatch.setattr(run_sweeps, "run_command", fake_run)
    monkeypatch.setattr(run_sweeps, "setup_logging", lambda args: str(tmp_path / "log"))
    assert run_sweeps.main([str(p)]) == 1
    assert calls == ["gen-data", "train-dynamics"]

    calls.clear()
    assert run_sweeps.main([str(p), "--continue-on-error"]) == 1
    assert calls == ["gen-data", "train-dynamics", "plan"]


def test_main_missing_or_empty_file(tmp_path, monkeypatch):
    monkeypatch.setattr(run_sweeps, "setup_logging", lambda args: str(tmp_path / "log"))
    assert run_sweeps.main([str(tmp_path / "missing.txt")]) == 1
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    assert run_sweeps.main([str(empty)]) == 1
