"""Scenario files: task, layout, perturbation and every tunable in one TOML file.

Minimal example::

    id = "carrot_shift10"
    task = "place_carrot"

    [perturbation]
    kind = "position_shift"
    label = "carrot"
    dx = 0.10

Any section left out takes the defaults of the corresponding dataclass.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .camera import CameraModel, look_at
from .detector import DetectorConfig
from .field import FieldParams, FieldWeights, WorkspaceGrid
from .intervention import InterventionConfig
from .kinematics import ArmModel, IKSettings, Joint, default_arm, inverse
from .policy import ExpertSettings, PolicyConfig
from .stages import Completion, Stage, TaskSpec, plan
from .tasks import BOUNDS, BUILTIN_TASKS
from .world import ConfigError, SceneObject, World

PERTURBATIONS = ("none", "position_shift", "object_swap", "distractor_add")


@dataclass(frozen=True)
class Perturbation:
    kind: str = "none"
    label: str | None = None
    dx: float = 0.0
    dy: float = 0.0
    to_label: str | None = None
    shape: str | None = None
    size: tuple[float, ...] | None = None
    position: tuple[float, float, float] | None = None
    graspable: bool | None = None

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ConfigError(f"unknown perturbation {self.kind!r}")
        if self.kind != "none" and not self.label:
            raise ConfigError(f"{self.kind} needs a label")
        if self.kind == "object_swap" and not self.to_label:
            raise ConfigError("object_swap needs to_label")
        if self.kind == "distractor_add" and (self.shape is None or self.size is None or self.position is None):
            raise ConfigError("distractor_add needs shape, size and position")

    def describe(self) -> str:
        if self.kind == "position_shift":
            return f"shift({self.label},{round(self.dx * 100, 6):g},{round(self.dy * 100, 6):g})"
        if self.kind == "object_swap":
            return f"swap({self.label}->{self.to_label})"
        if self.kind == "distractor_add":
            return f"distractor({self.label})"
        return "none"


@dataclass(frozen=True)
class FieldSettings:
    resolution: int = 32
    voxel_size: float | None = None
    origin: tuple[float, float, float] | None = None
    weights: FieldWeights = FieldWeights()
    params: FieldParams = FieldParams(influence_voxels=3.0)
    cadence_hz: float = 2.0
    dropout: float = 0.0
    ignore_labels: tuple[str, ...] = ()

    def grid(self) -> WorkspaceGrid:
        lo, hi = BOUNDS
        origin = tuple(lo) if self.origin is None else self.origin
        size = float(np.max(hi - lo)) / self.resolution if self.voxel_size is None else self.voxel_size
        return WorkspaceGrid(origin, size, self.resolution)


@dataclass(frozen=True)
class CameraSettings:
    eye: tuple[float, float, float] = (0.95, 0.0, 0.60)
    target: tuple[float, float, float] = (0.36, 0.0, 0.0)
    fx: float = 120.0
    fy: float = 120.0
    width: int = 128
    height: int = 96

    def model(self) -> CameraModel:
        return CameraModel(
            self.fx, self.fy, (self.width - 1) / 2, (self.height - 1) / 2, self.width, self.height,
            look_at(self.eye, self.target),
        )


@dataclass(frozen=True)
class WorldSettings:
    grasp_radius: float = 0.02
    max_joint_speed: float = 2.0
    max_eef_speed: float = 0.3
    home: tuple[float, float, float] = (0.24, 0.0, 0.24)


@dataclass(frozen=True)
class RunSettings:
    control_rate: float = 20.0
    max_steps: int = 1500
    replan_every: int = 10
    executor_speed: float = 0.15
    layout_jitter: float = 0.0
    jitter_labels: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    task: TaskSpec
    objects: tuple[SceneObject, ...]
    perturbation: Perturbation = Perturbation()
    seed: int = 0
    arm: ArmModel = field(default_factory=default_arm)
    world: WorldSettings = WorldSettings()
    field: FieldSettings = FieldSettings()
    camera: CameraSettings = CameraSettings()
    detector: DetectorConfig = DetectorConfig()
    intervention: InterventionConfig = InterventionConfig()
    policy: PolicyConfig = PolicyConfig()
    expert: ExpertSettings = ExpertSettings()
    run: RunSettings = RunSettings()
    task_name: str = "custom"

    def with_overrides(self, **sections) -> "Scenario":
        """Replace fields of nested sections, e.g. ``intervention={"num_waypoints": 3}``."""
        changes = {}
        for name, value in sections.items():
            current = getattr(self, name)
            changes[name] = replace(current, **value) if isinstance(value, dict) else value
        return replace(self, **changes)

    # ----------------------------------------------------------------- worlds
    def home_joints(self) -> np.ndarray:
        seed = np.array([0.0, 0.6, 1.2, 0.9])[: self.arm.dof]
        if len(seed) < self.arm.dof:
            seed = np.concatenate([seed, np.zeros(self.arm.dof - len(seed))])
        return inverse(self.arm, self.world.home, seed, IKSettings(max_iterations=500))

    def _world(self, objects) -> World:
        w = World(
            objects={o.label: o for o in objects},
            bounds=BOUNDS,
            arm=self.arm,
            q=self.home_joints(),
            dt=1.0 / self.run.control_rate,
            grasp_radius=self.world.grasp_radius,
            max_joint_speed=self.world.max_joint_speed,
            max_eef_speed=self.world.max_eef_speed,
        )
        w.validate_layout()
        return w

    def canonical_world(self) -> World:
        world = self._world(self.objects)
        plan(self.task, world.labels())
        return world

    def episode_task(self) -> TaskSpec:
        p = self.perturbation
        if p.kind == "object_swap":
            return self.task.renamed(p.label, p.to_label)
        return self.task

    def make_world(self, seed: int) -> World:
        """Perturbed layout for one episode; deterministic in ``seed``."""
        return self._world(apply_perturbation(self, seed))

    def canonical_key(self) -> tuple:
        return (
            self.objects,
            tuple(self.arm.joints),
            self.world,
            self.run.control_rate,
            self.expert,
            self.camera,
            self.task,
        )


def apply_perturbation(scenario: Scenario, seed: int) -> list[SceneObject]:
    objs = {o.label: o for o in scenario.objects}
    p = scenario.perturbation
    if p.kind != "none" and p.kind != "distractor_add" and p.label not in objs:
        raise ConfigError(f"perturbation names unknown object {p.label!r}")
    if p.kind == "position_shift":
        o = objs[p.label]
        objs[p.label] = o.moved(o.center + np.array([p.dx, p.dy, 0.0]))
    elif p.kind == "object_swap":
        o = objs[p.label]
        shape = p.shape or o.shape
        size = tuple(p.size) if p.size is not None else o.size
        hh = size[2] if shape == "box" else size[1]
        pos = (o.position[0], o.position[1], o.bottom + hh)
        grasp = o.graspable if p.graspable is None else p.graspable
        swapped = SceneObject(p.to_label, shape, pos, size, grasp, o.container)
        if p.to_label in objs:
            raise ConfigError(f"swap target label {p.to_label!r} already exists")
        objs = {(p.to_label if k == p.label else k): (swapped if k == p.label else v) for k, v in objs.items()}
    elif p.kind == "distractor_add":
        if p.label in objs:
            raise ConfigError(f"distractor label {p.label!r} already exists")
        objs[p.label] = SceneObject(p.label, p.shape, p.position, tuple(p.size), bool(p.graspable))
    jit = scenario.run.layout_jitter
    if jit > 0:
        rng = np.random.default_rng([seed, 1009])
        for label in scenario.run.jitter_labels:
            if label in objs:
                o = objs[label]
                dxy = rng.normal(0.0, jit, 2)
                objs[label] = o.moved(o.center + np.array([dxy[0], dxy[1], 0.0]))
    return list(objs.values())


# --------------------------------------------------------------------- loading
def _dataclass_from(cls, data: dict[str, Any] | None, where: str, **extra):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {sorted(unknown)}")
    for k, v in list(data.items()):
        if isinstance(v, list):
            data[k] = tuple(v)
    data.update(extra)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _objects_from(items) -> list[SceneObject]:
    out = []
    for d in items:
        d = dict(d)
        try:
            out.append(
                SceneObject(
                    d.pop("label"), d.pop("shape"), tuple(d.pop("position")), tuple(d.pop("size")),
                    bool(d.pop("graspable", False)), bool(d.pop("container", False)),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"object entry missing {exc}") from None
        if d:
            raise ConfigError(f"object entry has unknown key(s): {sorted(d)}")
    return out


def _task_from(data) -> tuple[TaskSpec, list[SceneObject] | None]:
    if isinstance(data, str):
        if data not in BUILTIN_TASKS:
            raise ConfigError(f"unknown task {data!r}; built-ins: {sorted(BUILTIN_TASKS)}")
        task, objects = BUILTIN_TASKS[data]()
        return task, objects
    stages = []
    for s in data.get("stages", []):
        s = dict(s)
        comp = Completion.from_dict(s.pop("completion"))
        stages.append(Stage(s.pop("verb"), s.pop("target"), comp))
    return TaskSpec(data.get("instruction", ""), tuple(stages)), None


def _arm_from(data) -> ArmModel:
    joints = []
    for j in data.get("joints", []):
        joints.append(Joint(tuple(j["axis"]), tuple(j["offset"]), j.get("lower", -np.pi), j.get("upper", np.pi)))
    if not joints:
        return default_arm()
    base = np.eye(4)
    if "base" in data:
        base[:3, 3] = data["base"]
    return ArmModel(tuple(joints), base)


def scenario_from_dict(data: dict[str, Any], base_dir: Path | None = None) -> Scenario:
    data = dict(data)
    known = {
        "id", "task", "objects", "perturbation", "seed", "arm", "world", "field", "camera",
        "detector", "intervention", "policy", "expert", "run", "extra_objects",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if "task" not in data:
        raise ConfigError("scenario needs a task")
    task, objects = _task_from(data["task"])
    if "objects" in data:
        objects = _objects_from(data["objects"])
    if objects is None:
        raise ConfigError("custom tasks need an [[objects]] list")
    if "extra_objects" in data:
        objects = list(objects) + _objects_from(data["extra_objects"])
    fdata = dict(data.get("field", {}))
    weights = FieldWeights(fdata.pop("w_target", 0.7), fdata.pop("w_obst", 0.3))
    pkeys = {"sigma", "eef_exempt_radius", "target_buffer_radius", "influence_voxels"}
    pvals = {k: fdata.pop(k) for k in list(fdata) if k in pkeys}
    params = _dataclass_from(FieldParams, {"influence_voxels": 3.0, **pvals}, "field")
    return Scenario(
        id=str(data.get("id", "scenario")),
        task=task,
        objects=tuple(objects),
        perturbation=_dataclass_from(Perturbation, data.get("perturbation"), "perturbation"),
        seed=int(data.get("seed", 0)),
        arm=_arm_from(data.get("arm", {})),
        world=_dataclass_from(WorldSettings, data.get("world"), "world"),
        field=_dataclass_from(FieldSettings, fdata, "field", weights=weights, params=params),
        camera=_dataclass_from(CameraSettings, data.get("camera"), "camera"),
        detector=_dataclass_from(DetectorConfig, data.get("detector"), "detector"),
        intervention=_dataclass_from(InterventionConfig, data.get("intervention"), "intervention"),
        policy=_dataclass_from(PolicyConfig, data.get("policy"), "policy"),
        expert=_dataclass_from(ExpertSettings, data.get("expert"), "expert"),
        run=_dataclass_from(RunSettings, data.get("run"), "run"),
        task_name=data["task"] if isinstance(data["task"], str) else str(data["task"].get("name", "custom")),
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_dict(data, path.parent)


def builtin_scenario(task: str = "place_carrot", **overrides) -> Scenario:
    return scenario_from_dict({"id": task, "task": task, **overrides})


REFERENCE_DEGRADATION = 0.98


def reference_scenario(dx: float = 0.10, dy: float = 0.0, **overrides) -> Scenario:
    """place_carrot with the carrot shifted by (dx, dy) and weak visual grounding.

    The policy ignores its short-range servoing on most queries, the way a
    colour or background change degrades grounding, so that the candidate
    pool rather than a single lucky query decides recovery.
    """
    base = {
        "id": "carrot_reference",
        "perturbation": {"kind": "position_shift", "label": "carrot", "dx": dx, "dy": dy},
        "policy": {"conditioning_degradation": REFERENCE_DEGRADATION},
    }
    for k, v in overrides.items():
        base[k] = {**base[k], **v} if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return builtin_scenario("place_carrot", **base)
