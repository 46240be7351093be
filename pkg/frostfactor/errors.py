"""
Exceptions raised by the toolkit. Each carries the process exit code the
command-line front end reports for it.
"""
from __future__ import annotations

__all__ = [
    "CorpusFormatError",
    "DivergenceError",
    "EmbeddingFormatError",
    "FrostFactorError",
    "InputError",
    "MissingArtifactError",
    "NotFoundError",
    "ParameterError",
    "StaleArtifactError",
    "StaleCacheError",
    "WorkdirLockedError",
]


class FrostFactorError(Exception):
    """Base class of all errors raised deliberately by this package."""

    exit_code = 1


class ParameterError(FrostFactorError, ValueError):
    """An argument or configuration value is outside its valid range."""

    exit_code = 2


class InputError(FrostFactorError):
    """An input file is unreadable or malformed."""

    exit_code = 3


class CorpusFormatError(InputError):
    """
    A review record could not be parsed.

    Attributes:
        line_number: One-based number of the offending line.
    """

    def __init__(self, line_number: int, reason: str) -> None:
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number


class EmbeddingFormatError(InputError):
    """A line of a word vector file has the wrong shape."""

    def __init__(self, line_number: int, reason: str) -> None:
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number


class MissingArtifactError(InputError):
    """
    A pipeline stage needs an artifact that has not been produced yet.

    Attributes:
        command: Name of the command that produces the missing artifact.
    """

    def __init__(self, artifact: str, command: str) -> None:
        super().__init__(
            f"Missing artifact ‘{artifact}’. Run the ‘{command}’ command first."
        )
        self.command = command


class WorkdirLockedError(InputError):
    """Another process holds the work directory lock."""


class StaleArtifactError(FrostFactorError):
    """An artifact no longer matches the inputs it was built from."""

    exit_code = 4


class DivergenceError(FrostFactorError, ArithmeticError):
    """
    Training produced a non-finite value.

    Attributes:
        epoch: One-based epoch in which the divergence was detected.
    """

    exit_code = 5

    def __init__(self, epoch: int, what: str = "parameters") -> None:
        super().__init__(f"Training diverged in epoch {epoch}: non-finite {what}.")
        self.epoch = epoch


class NotFoundError(FrostFactorError, KeyError):
    """A user, item or business identifier is unknown."""

    exit_code = 6

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable.
        return str(self.args[0]) if self.args else ""


class StaleCacheError(FrostFactorError, RuntimeError):
    """A forward cache was used after the model it came from was updated."""

    exit_code = 7
