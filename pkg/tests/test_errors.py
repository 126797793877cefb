"""Exception families and their CLI exit codes."""

import pytest

from score_guided_planning.errors import (
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    LevelIndexError,
    NumericError,
    RolloutDivergenceError,
    ShapeError,
    StepSizeError,
    TrainingDivergedError,
    exit_code_for,
)


@pytest.mark.parametrize(
    "exc,code",
    [
        (ConfigError("x"), 2),
        (ShapeError("x"), 2),
        (ContractError("x"), 2),
        (LevelIndexError("x"), 2),
        (DomainError("x"), 3),
        (NumericError("x"), 3),
        (TrainingDivergedError("x", {"lr": 1.0}), 3),
        (RolloutDivergenceError("x", step=4), 3),
        (StepSizeError("x"), 3),
        (FormatError("x", offset=16), 4),
        (FileNotFoundError("x"), 4),
        (RuntimeError("x"), 1),
    ],
)
def test_exit_codes(exc, code):
    assert exit_code_for(exc) == code


def test_errors_are_also_builtin_exceptions():
    assert isinstance(ConfigError("x"), ValueError)
    assert isinstance(NumericError("x"), ArithmeticError)
    assert isinstance(FormatError("x"), OSError)
    assert isinstance(LevelIndexError("x"), IndexError)


def test_format_error_reports_offset_and_diagnostics_are_kept():
    e = FormatError("bad magic", offset=0)
    assert "offset 0" in str(e) and e.offset == 0
    assert TrainingDivergedError("nan", {"step": 3}).diagnostics == {"step": 3}
    r = RolloutDivergenceError("boom", step=2, last_valid="plan")
    assert (r.step, r.last_valid) == (2, "plan")
