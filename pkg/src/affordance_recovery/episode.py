"""Closed-loop episodes: policy control, field publication, detection, recovery."""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .detector import TrapDetector
from .intervention import HistoryBuffer, InterventionConfig, MotionError, run_intervention
from .kinematics import ActionChunk, IKSettings, inverse
from .pipeline import FieldBuilder, FieldPublisher
from .policy import MemorizingPolicy, NominalTrajectory, Observation, record_expert
from .scenario import Scenario
from .stages import advance_stage, plan, success
from .world import ConfigError

MODES = ("baseline", "afi", "afi_no_rollback", "fixed_step")
_FIXED = re.compile(r"^fixed[_-]?step[(:_=\s]*(\d+)\)?$")


@dataclass(frozen=True)
class Mode:
    kind: str
    fixed_step: int | None = None

    @property
    def name(self) -> str:
        return f"fixed_step({self.fixed_step})" if self.kind == "fixed_step" else self.kind

    @property
    def intervenes(self) -> bool:
        return self.kind != "baseline"


def parse_mode(text: str | Mode) -> Mode:
    if isinstance(text, Mode):
        return text
    t = text.strip().lower()
    if t in ("baseline", "afi", "afi_no_rollback"):
        return Mode(t)
    m = _FIXED.match(t)
    if m:
        return Mode("fixed_step", int(m.group(1)))
    raise ConfigError(f"unknown mode {text!r}; expected one of baseline, afi, afi_no_rollback, fixed_step(T)")


@dataclass
class EpisodeRecord:
    scenario_id: str
    seed: int
    mode: str
    condition: str
    success: bool = False
    steps: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    interventions: list[dict] = field(default_factory=list)
    stage_transitions: list[dict] = field(default_factory=list)
    error: str | None = None
    timings: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def summary(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "condition": self.condition,
            "mode": self.mode,
            "seed": self.seed,
            "success": self.success,
            "steps": self.n_steps,
            "trap_events": len(self.events),
            "interventions": len(self.interventions),
            "error": self.error,
        }


class _Stop(Exception):
    """Raised from deep inside a motion when the episode has to end."""


_NOMINAL_CACHE: dict = {}


def nominal_for(scenario: Scenario, builder: FieldBuilder | None = None) -> NominalTrajectory:
    """Expert demonstration in the canonical layout, memoized per scenario geometry."""
    key = scenario.canonical_key()
    hit = _NOMINAL_CACHE.get(key)
    if hit is None:
        world = scenario.canonical_world()
        builder = builder or FieldBuilder(scenario.field.grid(), scenario.camera.model())
        hit = record_expert(world, scenario.task, scenario.expert, perceive=builder.perceived_centroid)
        _NOMINAL_CACHE[key] = hit
    return hit


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class Episode:
    """One seeded run. Also acts as the intervention executor."""

    def __init__(self, scenario: Scenario, seed: int, mode: str | Mode = "baseline", log_steps: bool = True,
                 intervention: InterventionConfig | None = None):
        self.scenario = scenario
        self.seed = int(seed)
        self.mode = parse_mode(mode)
        self.log_steps = log_steps
        self.icfg = intervention or scenario.intervention
        if self.mode.kind == "afi_no_rollback":
            self.icfg = InterventionConfig(**{**self.icfg.__dict__, "rollback": False})
        self.world = scenario.make_world(self.seed)
        self.task = scenario.episode_task()
        self.stages = plan(self.task, self.world.labels())
        self.builder = FieldBuilder(
            scenario.field.grid(), scenario.camera.model(), scenario.field.weights, scenario.field.params,
            scenario.field.dropout, self.seed, ignore_labels=scenario.field.ignore_labels,
        )
        self.nominal = nominal_for(scenario)
        self.policy = MemorizingPolicy(scenario.arm, self.nominal, scenario.policy)
        self.publisher = FieldPublisher()
        self.detector = TrapDetector(scenario.detector)
        self.history = HistoryBuffer(200)
        self.stage = 0
        self.step_count = 0
        self.phase = "policy"
        self.period = 1.0 / scenario.field.cadence_hz
        self.next_build = 0.0
        self.ik = IKSettings(max_iterations=100)
        self.record = EpisodeRecord(scenario.id, self.seed, self.mode.name, scenario.perturbation.describe())
        self.build_times: list[float] = []
        self._costs = None

    # -------------------------------------------------------------- plumbing
    @property
    def time(self) -> float:
        return self.world.time

    def target_label(self) -> str:
        return self.stages[min(self.stage, len(self.stages) - 1)].target_label

    def _publish(self) -> None:
        item = self.builder.build(self.world, self.target_label())
        self.publisher.publish(item)
        self.build_times.append(item.build_seconds)

    def latest_field(self):
        return self.publisher.latest().field

    def target_centroid(self) -> NDArray[np.float64] | None:
        if self.stage >= len(self.stages):
            return None
        latest = self.publisher.latest()
        if latest is None or latest.target_label != self.target_label():
            return None
        return latest.snapshot.target_centroid

    def observation(self) -> Observation:
        return Observation(self.world.eef, self.world.q.copy(), self.world.gripper_closed, self.stage, self.target_centroid())

    def observation_at(self, point) -> Observation:
        q = inverse(self.world.arm, point, self.world.q, self.ik)
        return Observation(np.asarray(point, dtype=float).copy(), q, self.world.gripper_closed, self.stage, self.target_centroid())

    def _observe(self) -> None:
        t, p = self.world.time, self.world.eef
        self.history.record(t, p)
        self.detector.observe(t, p)
        cost = self.latest_field().query(p)
        if self.log_steps:
            self.record.steps.append(
                {"t": t, "eef": [float(v) for v in p], "cost": cost, "stage": self.stage, "phase": self.phase}
            )
        else:
            self.record.steps.append({"t": t})

    def step_world(self, q, gripper: bool) -> None:
        if self.step_count >= self.scenario.run.max_steps:
            raise _Stop("budget")
        self.world.step(q, gripper)
        self.step_count += 1
        new_stage = advance_stage(self.stages, self.world, self.stage)
        if new_stage != self.stage:
            self.record.stage_transitions.append({"t": self.world.time, "from": self.stage, "to": new_stage})
            self.stage = new_stage
            self._publish()
            self.next_build = self.world.time + self.period
        elif self.world.time >= self.next_build - 1e-9:
            self._publish()
            self.next_build += self.period
        self._observe()
        if success(self.world, self.task):
            raise _Stop("success")
        if self.step_count >= self.scenario.run.max_steps:
            raise _Stop("budget")

    # ----------------------------------------------------- executor protocol
    def _grip_hold(self) -> bool:
        return self.world.attached is not None

    def _track(self, goals: NDArray[np.float64], tol: float = 0.01) -> None:
        q = self.world.q.copy()
        grip = self._grip_hold()
        for g in goals:
            q = inverse(self.world.arm, g, q, self.ik)
            self.step_world(q, grip)
        # let the arm settle onto the last target if speed caps made it lag
        for _ in range(20):
            if np.linalg.norm(self.world.eef - goals[-1]) <= 1e-3:
                break
            self.step_world(q, grip)
        if np.linalg.norm(self.world.eef - goals[-1]) > tol:
            raise MotionError(f"could not reach {np.round(goals[-1], 4).tolist()}")

    def _line(self, a, b) -> NDArray[np.float64]:
        spacing = self.scenario.run.executor_speed * self.world.dt
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
        return a + (np.arange(1, n + 1)[:, None] / n) * (b - a)

    def drive_to(self, point) -> None:
        point = np.asarray(point, dtype=float)
        if np.linalg.norm(point - self.world.eef) < 1e-4:
            return
        self._track(self._line(self.world.eef, point))

    def drive_path(self, points) -> None:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        goals, last = [], self.world.eef
        for p in pts:
            if np.linalg.norm(p - last) < 2e-3:
                continue
            goals.extend(self._line(last, p))
            last = p
        if goals:
            self._track(np.array(goals))

    def execute_chunk(self, chunk: ActionChunk) -> None:
        for q, g in zip(chunk.states, chunk.gripper):
            self.step_world(q, bool(g))

    # ------------------------------------------------------------ main loop
    def _intervene(self, event) -> None:
        self.phase = "intervention"
        if self.world.attached is None and self.world.gripper_closed:
            self.world.gripper_closed = False
        seed = derive_seed(self.seed, len(self.record.interventions), 17)
        try:
            outcome = run_intervention(event, self.policy, self, self.scenario.arm, self.icfg, seed)
        finally:
            self.phase = "policy"
        self.record.interventions.append({"t": self.world.time, **outcome.to_dict()})

    def _policy_loop(self) -> None:
        run = self.scenario.run
        fixed_done = False
        while True:
            obs = self.observation()
            chunk = self.policy.propose(obs, 1, derive_seed(self.seed, self.step_count))[0]
            for j in range(min(run.replan_every, chunk.horizon)):
                self.step_world(chunk.states[j], bool(chunk.gripper[j]))
                if self.mode.kind == "fixed_step":
                    if not fixed_done and self.step_count >= self.mode.fixed_step:
                        fixed_done = True
                        self.detector.trigger(self.world.time)
                        self._intervene(None)
                        break
                    continue
                event = self.detector.check(self.target_centroid())
                if event is not None:
                    self.record.events.append(event.to_dict())
                    if self.mode.intervenes:
                        self._intervene(event)
                        break

    def run(self) -> EpisodeRecord:
        t0 = time.perf_counter()
        self._publish()
        self.next_build = self.period
        self._observe()
        try:
            self._policy_loop()
        except _Stop:
            pass
        except Exception as exc:  # runtime failure: record it, mark failed
            self.record.error = f"{type(exc).__name__}: {exc}"
        self.record.success = self.record.error is None and success(self.world, self.task)
        self.record.timings = {
            "episode_wall_s": time.perf_counter() - t0,
            "field_build_s": _percentiles(self.build_times),
        }
        return self.record


def _percentiles(values) -> dict:
    if not values:
        return {}
    v = np.asarray(values)
    return {"n": int(v.size), "p50": float(np.percentile(v, 50)), "p95": float(np.percentile(v, 95)), "max": float(v.max())}


def run_episode(scenario: Scenario, seed: int, mode: str | Mode = "baseline", log_steps: bool = True) -> EpisodeRecord:
    return Episode(scenario, seed, mode, log_steps).run()
