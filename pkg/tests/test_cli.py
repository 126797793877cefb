import json
import math

import pytest

from score_guided_planning import cli
from score_guided_planning.errors import EXIT_CONFIG, EXIT_IO, EXIT_OK, ConfigError
from score_guided_planning.reports import write_json_atomic

from conftest import small_experiment_config


def test_every_command_has_a_subparser():
    parser = cli.build_parser()
    subparsers = next(a for a in parser._actions if a.dest == "command")
    assert tuple(subparsers.choices) == cli.COMMANDS


class TestParseGrid:
    def test_values_and_inf(self):
        grid = cli.parse_grid("0, 1e-2 ,inf")
        assert grid[:2] == [0.0, 0.01] and math.isinf(grid[2])

    @pytest.mark.parametrize("text", ["", " , ", "0,abc"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            cli.parse_grid(text)


class TestOverrides:
    def test_json_and_plain_values(self):
        assert cli._parse_override("planner.beta=0.5") == ("planner.beta", 0.5)
        assert cli._parse_override("score.net.hidden=[8, 8]") == ("score.net.hidden", [8, 8])
        assert cli._parse_override("env.name=pit") == ("env.name", "pit")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="KEY=VALUE"):
            cli._parse_override("planner.beta")


class TestResolveConfig:
    def test_flags_beat_overrides_beat_the_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        write_json_atomic(path, small_experiment_config(tmp_path / "from-file").to_dict())
        args = cli.parse_args(
            [
                "plan",
                "--config",
                str(path),
                "--set",
                "planner.beta=0.5",
                "--beta",
                "2.0",
                "--seed",
                "7",
                "--output-dir",
                str(tmp_path / "out"),
            ]
        )
        cfg = cli.resolve_config(args)
        assert cfg.planner.beta == 2.0
        assert cfg.seed == cfg.data.seed == cfg.planner.seed == 7
        assert cfg.output_dir == str(tmp_path / "out")
        assert cfg.env.name == "integrator" and cfg.data.n == 300

    def test_env_picks_its_example_config(self):
        cfg = cli.resolve_config(cli.parse_args(["gen-data", "--env", "pit", "--n", "50"]))
        assert cfg.env.name == "pit" and cfg.data.n == 50

    def test_env_flag_replaces_the_file_env(self, tmp_path):
        path = tmp_path / "cfg.json"
        write_json_atomic(path, small_experiment_config(tmp_path).to_dict())
        cfg = cli.resolve_config(
            cli.parse_args(["gen-data", "--config", str(path), "--env", "pit"])
        )
        assert cfg.env.name == "pit" and cfg.env.params == {}

    def test_no_progress(self):
        cfg = cli.resolve_config(cli.parse_args(["train-score", "--no-progress"]))
        trains = (cfg.dynamics.train, cfg.score.train, cfg.distance.train)
        assert not any(train.progress for train in trains)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    write_json_atomic(path, small_experiment_config(tmp_path / "run").to_dict())
    return path


def test_pipeline_exit_codes(config_file, tmp_path, capsys):
    base = ["--config", str(config_file), "--no-progress"]
    assert cli.main(["gen-data", *base]) == EXIT_OK
    assert cli.main(["train-dynamics", *base]) == EXIT_OK
    assert cli.main(["plan", *base, "--method", "vanilla"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Plan (vanilla)" in out and f"Results in {tmp_path / 'run'}" in out
    metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert {"gen-data", "train-dynamics", "plan.vanilla"} <= set(metrics)


def test_plot_records_the_resolved_config(config_file, tmp_path):
    out = tmp_path / "plots"
    args = ["plot", "--config", str(config_file), "--output-dir", str(out), "--set", "seed=5"]
    assert cli.main(args) == EXIT_OK
    written = json.loads((out / "config.json").read_text())
    assert written["output_dir"] == str(out) and written["seed"] == 5


def test_config_error_exit_code(config_file, capsys):
    args = ["gen-data", "--config", str(config_file), "--set", "planner.beta=-1"]
    assert cli.main(args) == EXIT_CONFIG
    assert "Error:" in capsys.readouterr().err


def test_missing_dataset_exit_code(config_file, capsys):
    assert cli.main(["train-dynamics", "--config", str(config_file)]) == EXIT_IO
    assert "gen-data" in capsys.readouterr().err


def test_unknown_config_key(config_file):
    args = ["gen-data", "--config", str(config_file), "--set", "planner.gamma=1"]
    assert cli.main(args) == EXIT_CONFIG
