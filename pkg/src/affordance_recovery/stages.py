"""Scripted task staging and world-state completion predicates.

A task is a fixed, scenario-declared list of stages. Each stage names the
object the affordance field should attract the tool toward and a predicate
from a closed set that marks the stage complete.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .world import ConfigError, World

VERBS = ("pick", "move", "place", "insert", "remove", "stack")
PREDICATES = ("attached", "within", "on_top", "near")


@dataclass(frozen=True)
class Completion:
    """``kind`` plus its arguments.

    attached(label)
    within(label, region, tol): released, center within ``tol`` of the region's
        vertical axis and resting between its bottom and top
    on_top(label, base, tol): released, centered over ``base`` within ``tol``
        and resting on its top face within ``tol``
    near(label, point, tol): released and center within ``tol`` of ``point``
    """

    kind: str
    label: str
    region: str | None = None
    point: tuple[float, float, float] | None = None
    tol: float = 0.0

    def __post_init__(self):
        if self.kind not in PREDICATES:
            raise ConfigError(f"unknown completion predicate {self.kind!r}")
        if self.kind in ("within", "on_top") and self.region is None:
            raise ConfigError(f"{self.kind} needs a region/base label")
        if self.kind == "near" and self.point is None:
            raise ConfigError("near needs a point")
        if self.tol < 0:
            raise ConfigError("predicate tolerance must be non-negative")

    def labels(self) -> tuple[str, ...]:
        return (self.label,) if self.region is None else (self.label, self.region)

    def holds(self, world: World) -> bool:
        obj = world.get(self.label)
        if self.kind == "attached":
            return world.attached == self.label
        if world.attached == self.label:
            return False
        if self.kind == "near":
            return bool(np.linalg.norm(obj.center - np.asarray(self.point)) <= self.tol)
        ref = world.get(self.region)
        radial = float(np.hypot(*(obj.center[:2] - ref.center[:2])))
        if radial > self.tol:
            return False
        if self.kind == "within":
            return ref.bottom - 1e-6 <= obj.bottom <= ref.top + 1e-6
        return abs(obj.bottom - ref.top) <= self.tol

    def renamed(self, old: str, new: str) -> "Completion":
        return replace(
            self,
            label=new if self.label == old else self.label,
            region=new if self.region == old else self.region,
        )

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Completion":
        d = dict(d)
        kind = d.pop("kind", None) or d.pop("type", None)
        if "point" in d:
            d["point"] = tuple(float(v) for v in d["point"])
        try:
            return cls(kind=kind, **d)
        except TypeError as exc:
            raise ConfigError(f"bad completion predicate: {exc}") from None


@dataclass(frozen=True)
class Stage:
    verb: str
    target_label: str
    completion: Completion

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ConfigError(f"unknown stage verb {self.verb!r}")


@dataclass(frozen=True)
class TaskSpec:
    instruction: str
    stages: tuple[Stage, ...] = field(default_factory=tuple)

    def renamed(self, old: str, new: str) -> "TaskSpec":
        stages = tuple(
            Stage(s.verb, new if s.target_label == old else s.target_label, s.completion.renamed(old, new))
            for s in self.stages
        )
        return TaskSpec(self.instruction, stages)


def plan(task: TaskSpec, labels) -> list[Stage]:
    """Validate the declared stages against the labels present in the world."""
    labels = set(labels)
    if not task.stages:
        raise ConfigError("task needs at least one stage")
    for i, s in enumerate(task.stages):
        missing = [lab for lab in (s.target_label, *s.completion.labels()) if lab not in labels]
        if missing:
            raise ConfigError(f"stage {i} ({s.verb}) references unknown label(s) {missing}")
    return list(task.stages)


def advance_stage(stages: list[Stage], world: World, current: int) -> int:
    """Move to the next stage once the current one is complete (at most one step)."""
    if current >= len(stages):
        return len(stages)
    return current + 1 if stages[current].completion.holds(world) else current


def success(world: World, task: TaskSpec) -> bool:
    return task.stages[-1].completion.holds(world)
