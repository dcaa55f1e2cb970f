"""Exception hierarchy shared by every subpackage.

Configuration and input problems also subclass ``ValueError`` so callers that
only know the builtin still catch them.
"""

from __future__ import annotations

from pathlib import Path


class TokenizerError(Exception):
    """Base class for all errors raised by this project."""


class ConfigurationError(TokenizerError, ValueError):
    """A configuration value or a shape contract is invalid."""


class InputError(TokenizerError, ValueError):
    """Runtime data (pixels, ids, streams) violates an operation's precondition."""


class ModeError(TokenizerError):
    """An operation was called in a tokenizer mode that does not support it."""


class NumericError(TokenizerError, ArithmeticError):
    """Non-finite activations or losses were produced."""


class UsageError(TokenizerError):
    """An API was used out of order or with unprepared inputs."""


class CheckpointError(TokenizerError):
    """A checkpoint file is malformed or does not match the requested use."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by a different container version."""

    def __init__(self, found: int, expected: int) -> None:
        super().__init__(
            f"Checkpoint container version {found} cannot be read by version "
            f"{expected}; migrate it with a matching release before loading."
        )
        self.found = found
        self.expected = expected


class WeightManifestError(ConfigurationError):
    """External encoder weights do not match the declared encoder shape."""


class TrainingDivergedError(NumericError):
    """A training loss became NaN/inf; carries the last good checkpoint."""

    def __init__(self, step: int, last_good: Path | None) -> None:
        where = str(last_good) if last_good is not None else "none saved yet"
        super().__init__(
            f"Non-finite loss at step {step}; last good checkpoint: {where}"
        )
        self.step = step
        self.last_good = last_good


__all__ = [
    "CheckpointError",
    "CheckpointVersionError",
    "ConfigurationError",
    "InputError",
    "ModeError",
    "NumericError",
    "TokenizerError",
    "TrainingDivergedError",
    "UsageError",
    "WeightManifestError",
]
