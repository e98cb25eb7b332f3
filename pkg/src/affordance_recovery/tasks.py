"""Built-in tabletop tasks and their canonical layouts.

Every task is a two-stage pick-then-deliver problem on a 0.64 m square table
whose top is the z = 0 plane. The arm base sits at the world origin on the
table's near edge.
"""

from __future__ import annotations

import numpy as np

from .stages import Completion, Stage, TaskSpec
from .world import SceneObject

BOUNDS = (np.array([0.0, -0.32, -0.04]), np.array([0.64, 0.32, 0.60]))


def table() -> SceneObject:
    return SceneObject("table", "box", (0.32, 0.0, -0.01), (0.32, 0.32, 0.01))


def place_carrot() -> tuple[TaskSpec, list[SceneObject]]:
    objects = [
        table(),
        SceneObject("carrot", "box", (0.34, -0.12, 0.012), (0.03, 0.012, 0.012), graspable=True),
        SceneObject("pot", "cylinder", (0.36, 0.15, 0.045), (0.07, 0.045), container=True),
    ]
    task = TaskSpec(
        "pick up the carrot and place it in the pot",
        (
            Stage("pick", "carrot", Completion("attached", "carrot")),
            Stage("place", "pot", Completion("within", "carrot", region="pot", tol=0.06)),
        ),
    )
    return task, objects


def remove_lid() -> tuple[TaskSpec, list[SceneObject]]:
    objects = [
        table(),
        SceneObject("pot", "cylinder", (0.38, -0.10, 0.045), (0.07, 0.045)),
        SceneObject("lid", "cylinder", (0.38, -0.10, 0.098), (0.072, 0.008), graspable=True),
        SceneObject("platter", "box", (0.36, 0.16, 0.005), (0.10, 0.10, 0.005)),
    ]
    task = TaskSpec(
        "remove the lid from the pot",
        (
            Stage("remove", "lid", Completion("attached", "lid")),
            Stage("place", "platter", Completion("within", "lid", region="platter", tol=0.04)),
        ),
    )
    return task, objects


def slot_pen() -> tuple[TaskSpec, list[SceneObject]]:
    objects = [
        table(),
        SceneObject("pen", "cylinder", (0.34, -0.12, 0.05), (0.007, 0.05), graspable=True),
        SceneObject("holder", "cylinder", (0.36, 0.12, 0.05), (0.02, 0.05), container=True),
    ]
    task = TaskSpec(
        "slot the pen into the holder",
        (
            Stage("pick", "pen", Completion("attached", "pen")),
            Stage("insert", "holder", Completion("within", "pen", region="holder", tol=0.015)),
        ),
    )
    return task, objects


def stack_tape() -> tuple[TaskSpec, list[SceneObject]]:
    objects = [
        table(),
        SceneObject("brown_tape", "cylinder", (0.34, -0.12, 0.012), (0.04, 0.012), graspable=True),
        SceneObject("grey_tape", "cylinder", (0.36, 0.14, 0.012), (0.04, 0.012)),
    ]
    task = TaskSpec(
        "stack the brown tape on top of the grey tape",
        (
            Stage("pick", "brown_tape", Completion("attached", "brown_tape")),
            Stage("stack", "grey_tape", Completion("on_top", "brown_tape", region="grey_tape", tol=0.02)),
        ),
    )
    return task, objects


BUILTIN_TASKS = {
    "place_carrot": place_carrot,
    "remove_lid": remove_lid,
    "slot_pen": slot_pen,
    "stack_tape": stack_tape,
}
