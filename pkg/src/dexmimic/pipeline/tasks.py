"""Task table: episode lengths and how success is decided."""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum

from dexmimic.errors import InvalidInputError


class SuccessRule(StrEnum):
    SR3 = "sr3"
    CONTAINMENT = "containment"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    episode_length: int
    success: SuccessRule
    supported: bool = True


TASKS: dict[str, TaskSpec] = {
    "relocate": TaskSpec("relocate", 60, SuccessRule.SR3),
    "place_inside": TaskSpec("place_inside", 80, SuccessRule.CONTAINMENT),
    # Listed for completeness; the fluid simulation it needs is not built.
    "pour": TaskSpec("pour", 100, SuccessRule.SR3, supported=False),
}


def task_spec(name: str, episode_length: int | None = None) -> TaskSpec:
    """Look up a runnable task, optionally overriding its episode length."""
    try:
        spec = TASKS[name]
    except KeyError as exc:
        known = ", ".join(sorted(TASKS))
        raise InvalidInputError(f"unknown task {name!r} (known: {known})") from exc
    if not spec.supported:
        raise InvalidInputError(f"task {name!r} is listed but not supported")
    if episode_length is not None:
        if episode_length < 1:
            raise InvalidInputError("episode length must be positive")
        spec = TaskSpec(spec.name, episode_length, spec.success, spec.supported)
    return spec
