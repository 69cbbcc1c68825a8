"""Exception hierarchy shared by every dexmimic module.

Input problems subclass ``ValueError`` so existing ``except ValueError``
call sites keep working; stage and collection failures are runtime errors
that the CLI maps to a distinct exit code.
"""

from __future__ import annotations

from typing import Any


class InvalidInputError(ValueError):
    """A precondition on shapes, finiteness or file contents was violated."""


class DegenerateCameraError(InvalidInputError):
    """The virtual camera saw nothing (every ray missed)."""


class CheckpointError(InvalidInputError):
    """A checkpoint or dataset file could not be decoded."""

    def __init__(self, path: Any, reason: str) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class StageError(RuntimeError):
    """A pipeline stage could not run."""

    def __init__(self, stage: str, reason: str) -> None:
        super().__init__(f"stage '{stage}' failed: {reason}")
        self.stage = stage
        self.reason = reason


class CollectionError(RuntimeError):
    """Rollout collection exhausted its attempt cap before meeting the quota."""

    def __init__(self, message: str, partial: Any = None) -> None:
        super().__init__(message)
        self.partial = partial
