"""
Exception hierarchy for the Score-Guided Planning toolkit.

Every error the package raises on purpose derives from ``SgpError`` and also
from the closest builtin (``ValueError``, ``ArithmeticError``, ``OSError``,
``IndexError``) so callers that only know the builtin still catch it. The CLI
maps each family to a process exit code via ``exit_code_for``.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class SgpError(Exception):
    """Base class for all toolkit errors."""

    pass


class ConfigError(SgpError, ValueError):
    """Invalid configuration (bad widths, N=0, empty sweep grid, unknown method...)."""

    pass


class ShapeError(SgpError, ValueError):
    """Array dimensions do not match what an operation expects."""

    pass


class ContractError(SgpError, ValueError):
    """An API precondition was violated (e.g. backward from a non-scalar)."""

    pass


class LevelIndexError(SgpError, IndexError):
    """Noise level k outside [1, K]."""

    pass


class DomainError(SgpError, ValueError):
    """Input outside a function's mathematical domain (empty point set, blank image)."""

    pass


class NumericError(SgpError, ArithmeticError):
    """A NaN or infinity surfaced in values or gradients."""

    pass


class TrainingDivergedError(NumericError):
    """Training loss became non-finite. ``diagnostics`` holds lr, level and step."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RolloutDivergenceError(NumericError):
    """A rollout produced a non-finite state at ``step``.

    Planners attach the last finite iterate they held as ``last_valid``.
    """

    def __init__(self, message: str, step: int, last_valid=None):
        super().__init__(message)
        self.step = step
        self.last_valid = last_valid


class StepSizeError(NumericError):
    """Annealed descent diverged; the step size is too large."""

    pass


class InfiniteSlopeError(NumericError):
    """Two identical points carry different errors, so no finite Lipschitz constant exists."""

    pass


class InternalConsistencyError(NumericError):
    """A quantity that is non-negative analytically came out clearly negative."""

    pass


class FormatError(SgpError, OSError):
    """A file on disk is not in the expected format. ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def exit_code_for(exc: BaseException) -> int:
    """Process exit code for an exception escaping a CLI command."""
    if isinstance(exc, FormatError):
        return EXIT_IO
    if isinstance(exc, (NumericError, DomainError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigError, ShapeError, ContractError, LevelIndexError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, ArithmeticError):
        return EXIT_NUMERIC
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return 1
