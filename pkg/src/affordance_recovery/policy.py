"""Stand-in for a learned visuomotor policy.

``MemorizingPolicy`` replays a scripted demonstration recorded in the
canonical layout. It locates itself on the demonstration by nearest tool
position and emits the next ``H`` joint states. Only when the perceived
target is already close (``capture_radius``) does it adapt, by translating
the remainder of the current stage toward where the target actually is.
Far from the target it heads to the memorized location regardless of the
scene, which is the failure the recovery layer exists to fix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .kinematics import ActionChunk, ArmModel, IKSettings, UnreachableError, inverse
from .stages import TaskSpec, advance_stage, plan, success
from .world import ConfigError, World


@dataclass(frozen=True, eq=False)
class Observation:
    eef: NDArray[np.float64]
    q: NDArray[np.float64]
    gripper_closed: bool
    stage_index: int
    target_centroid: NDArray[np.float64] | None = None


@dataclass(frozen=True)
class PolicyConfig:
    temperature: float = 0.05
    capture_radius: float = 0.06
    conditioning_degradation: float = 0.0
    horizon: int = 50
    blend_steps: int = 20

    def __post_init__(self):
        if self.temperature < 0 or self.capture_radius < 0:
            raise ValueError("temperature and capture_radius must be non-negative")
        if not 0 <= self.conditioning_degradation <= 1:
            raise ValueError("conditioning_degradation must be a probability")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True, eq=False)
class NominalTrajectory:
    states: NDArray[np.float64]
    gripper: NDArray[np.bool_]
    eef: NDArray[np.float64]
    stage: NDArray[np.int64]
    centroids: tuple[NDArray[np.float64], ...]

    def __len__(self) -> int:
        return len(self.states)

    def segment(self, stage: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.stage == stage)


@dataclass(frozen=True)
class ExpertSettings:
    transit_speed: float = 0.12
    approach_speed: float = 0.06
    pregrasp_height: float = 0.10
    approach_offset: tuple[float, float] = (-0.02, 0.0)
    travel_clearance: float = 0.10
    release_clearance: float = 0.02
    hold_steps: int = 8
    settle_steps: int = 4


def _segment(a: NDArray[np.float64], b: NDArray[np.float64], speed: float, dt: float) -> NDArray[np.float64]:
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / (speed * dt))))
    s = np.arange(1, n + 1)[:, None] / n
    return a + s * (b - a)


def expert_script(world: World, task: TaskSpec, settings: ExpertSettings = ExpertSettings()):
    """Cartesian targets plus gripper commands for a straight-line pick and deliver."""
    stages = plan(task, world.labels())
    if len(stages) != 2 or stages[0].completion.kind != "attached":
        raise ConfigError("the scripted expert handles pick-then-deliver tasks only")
    obj = world.get(stages[0].completion.label)
    goal = stages[1].completion
    dest = world.get(goal.region) if goal.region is not None else None
    dt = world.dt
    grasp = obj.center
    if goal.kind == "near":
        release = np.asarray(goal.point, dtype=float)
    elif goal.kind == "on_top":
        release = np.array([*dest.center[:2], dest.top + obj.half_height + 0.004])
    else:
        release = np.array([*dest.center[:2], max(dest.top, obj.bottom) + obj.half_height + settings.release_clearance])
    z_travel = max(grasp[2], release[2]) + settings.travel_clearance
    home = world.eef
    # slanted approach: a vertical dip straight back up would look stalled to
    # an endpoint-displacement detector
    pre = grasp + np.array([*settings.approach_offset, settings.pregrasp_height])
    lift = np.array([grasp[0], grasp[1], z_travel])
    above = np.array([release[0], release[1], z_travel])

    pts, grip = [], []

    def add(seg, closed):
        pts.extend(seg)
        grip.extend([closed] * len(seg))

    def hold(p, closed, n):
        add(np.repeat(p[None], n, axis=0), closed)

    add(_segment(home, pre, settings.transit_speed, dt), False)
    add(_segment(pre, grasp, settings.approach_speed, dt), False)
    hold(grasp, True, settings.hold_steps)
    add(_segment(grasp, lift, settings.transit_speed, dt), True)
    add(_segment(lift, above, settings.transit_speed, dt), True)
    add(_segment(above, release, settings.approach_speed, dt), True)
    hold(release, False, settings.hold_steps)
    add(_segment(release, above, settings.transit_speed, dt), False)
    hold(above, False, settings.settle_steps)
    return np.array(pts), np.array(grip, dtype=bool)


def record_expert(
    world: World,
    task: TaskSpec,
    settings: ExpertSettings = ExpertSettings(),
    perceive=None,
) -> NominalTrajectory:
    """Run the scripted expert in a copy of ``world`` and keep what it did.

    ``perceive(world, label)`` supplies the centroid the policy memorizes for
    each stage target (defaults to the true object center).
    """
    world = world.clone()
    stages = plan(task, world.labels())
    perceive = perceive or (lambda w, label: w.get(label).center)
    centroids = []
    for s in stages:
        c = perceive(world, s.target_label)
        if c is None:
            raise ConfigError(f"expert cannot see stage target {s.target_label!r} in the canonical layout")
        centroids.append(np.asarray(c, dtype=float))
    targets, grip = expert_script(world, task, settings)
    q = world.q.copy()
    states, eef, stage_of = [], [], []
    current = 0
    ik = IKSettings()
    for p, g in zip(targets, grip):
        try:
            q = inverse(world.arm, p, q, ik)
        except UnreachableError as exc:
            raise ConfigError(f"expert target unreachable: {exc}") from None
        stage_of.append(current)
        world.step(q, bool(g))
        states.append(world.q.copy())
        eef.append(world.eef)
        current = advance_stage(stages, world, current)
    if not success(world, task):
        raise ConfigError("scripted expert failed in the canonical layout")
    return NominalTrajectory(np.array(states), grip.copy(), np.array(eef), np.array(stage_of), tuple(centroids))


class MemorizingPolicy:
    def __init__(self, arm: ArmModel, nominal: NominalTrajectory, config: PolicyConfig = PolicyConfig()):
        self.arm = arm
        self.nominal = nominal
        self.config = config
        self._ik = IKSettings(max_iterations=60)

    def _candidates_mask(self, closed: bool, stage: int | None = None) -> NDArray[np.bool_]:
        nom = self.nominal
        mask = nom.gripper == closed
        if stage is not None:
            staged = mask & (nom.stage == stage)
            if staged.any():
                return staged
        return mask if mask.any() else np.ones(len(nom), dtype=bool)

    def progress_index(self, eef: ArrayLike, closed: bool, stage: int | None = None, offset=None) -> int:
        """Nearest demonstration step to ``eef`` (minus ``offset``); earliest wins ties."""
        p = np.asarray(eef, dtype=float)
        if offset is not None:
            p = p - offset
        mask = self._candidates_mask(closed, stage)
        idx = np.flatnonzero(mask)
        d = np.sum((self.nominal.eef[idx] - p) ** 2, axis=1)
        return int(idx[np.argmin(d)])

    def _window(self, m: int) -> NDArray[np.int64]:
        h = self.config.horizon
        return np.minimum(np.arange(m + 1, m + 1 + h), len(self.nominal) - 1)

    def blind_chunk(self, obs: Observation) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        m = self.progress_index(obs.eef, obs.gripper_closed)
        w = self._window(m)
        return self.nominal.states[w].copy(), self.nominal.gripper[w].copy()

    def captured(self, obs: Observation) -> bool:
        c = obs.target_centroid
        if c is None or obs.stage_index >= len(self.nominal.centroids):
            return False
        return bool(np.linalg.norm(np.asarray(c) - obs.eef) <= self.config.capture_radius)

    def servo_chunk(self, obs: Observation) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        """Demonstration continuation translated onto the perceived target."""
        nom = self.nominal
        stage = obs.stage_index
        delta = np.asarray(obs.target_centroid, dtype=float) - nom.centroids[stage]
        m = self.progress_index(obs.eef, obs.gripper_closed, stage, offset=delta)
        w = self._window(m)
        seg = nom.segment(stage)
        seg_end = int(seg[-1]) if len(seg) else m
        after = np.maximum(0, w - seg_end)
        weight = np.clip(1.0 - after / max(self.config.blend_steps, 1), 0.0, 1.0)
        goals = nom.eef[w] + weight[:, None] * delta
        states = nom.states[w].copy()
        q = obs.q
        for t, g in enumerate(goals):
            if weight[t] == 0.0:
                continue
            try:
                q = inverse(self.arm, g, q, self._ik)
                states[t] = q
            except UnreachableError:
                q = states[t]
        return states, nom.gripper[w].copy()

    def propose(self, obs: Observation, k: int, seed: int) -> list[ActionChunk]:
        cfg = self.config
        captured = self.captured(obs)
        blind = servo = None
        h = cfg.horizon
        ramp = (np.arange(1, h + 1) / h)[:, None]
        out = []
        for i in range(k):
            rng = np.random.default_rng([seed, i])
            degraded = rng.random() < cfg.conditioning_degradation
            noise = rng.normal(0.0, 1.0, self.arm.dof) * cfg.temperature
            if captured and not degraded:
                if servo is None:
                    servo = self.servo_chunk(obs)
                states, grip = servo
            else:
                if blind is None:
                    blind = self.blind_chunk(obs)
                states, grip = blind
            out.append(ActionChunk(self.arm.clip(states + ramp * noise), grip))
        return out


class EnsemblePolicy:
    """Concatenates the candidate pools of several policies (K from each)."""

    def __init__(self, policies):
        if not policies:
            raise ValueError("ensemble needs at least one policy")
        self.policies = list(policies)

    def propose(self, obs: Observation, k: int, seed: int) -> list[ActionChunk]:
        out = []
        for j, p in enumerate(self.policies):
            out.extend(p.propose(obs, k, int(np.random.SeedSequence([seed, j]).generate_state(1)[0])))
        return out
