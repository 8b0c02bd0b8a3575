"""Exception types raised by harmonia."""

from typing import List, Optional

from singer_sdk.exceptions import ConfigValidationError


class HarmoniaError(Exception):
    """Base class for every error raised by the library."""


class ContractError(HarmoniaError, ValueError):
    """An argument violates a precondition (shape, emptiness, index range)."""


class EventParseError(HarmoniaError):
    """A line of an event or gold file could not be parsed."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class PitchRangeError(EventParseError):
    """A MIDI pitch outside 0-127 (or a pitch class outside 0-11)."""


class AlignmentError(HarmoniaError):
    """Gold annotations and event sequences disagree on length."""

    def __init__(self, message: str, piece_id: Optional[str] = None):
        self.piece_id = piece_id
        super().__init__(message)


class GoldLabelError(HarmoniaError):
    """A gold key or chord token cannot be interpreted."""

    def __init__(self, token: str, reason: str = "unparseable label"):
        self.token = token
        super().__init__(f"{reason}: {token!r}")


class ConvergenceError(HarmoniaError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")


class ReducibleChainError(ContractError):
    """A Markov matrix is not irreducible, so its stationary vector is not unique."""


class EnumerationLimitError(ContractError):
    """Exhaustive path enumeration would exceed its guard."""


class TrainingAbortedError(HarmoniaError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, sequence_id: Optional[str] = None):
        self.sequence_id = sequence_id
        super().__init__(message)


class ConfigError(HarmoniaError, ConfigValidationError):
    """Settings failed coercion or schema validation."""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = list(errors or [])
