"""Recovery after a detected stall: rollback, waypoint search, candidate scoring.

The routine is written against two small protocols so it can be driven by
the simulator or by anything else that can move a tool point:

* ``Executor``: ``drive_path(points)``, ``drive_to(point)``,
  ``execute_chunk(chunk)``, ``observation()``, ``latest_field()``,
  ``history`` and ``time``.
* ``Policy``: ``propose(observation, K, seed) -> list[ActionChunk]``.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .field import ScalarField, query_many
from .kinematics import ActionChunk, ArmModel, UnreachableError, chunk_to_path


class InterventionError(ValueError):
    """Empty inputs to a selection step."""


class MotionError(RuntimeError):
    """The executor could not complete a commanded motion."""


class HistoryBuffer:
    """Bounded, time-ordered record of tool positions."""

    def __init__(self, capacity: int = 200):
        if capacity < 1:
            raise ValueError("history capacity must be >= 1")
        self.capacity = capacity
        self.times: deque[float] = deque(maxlen=capacity)
        self.points: deque[NDArray[np.float64]] = deque(maxlen=capacity)

    def record(self, t: float, p: ArrayLike) -> "HistoryBuffer":
        if self.times and t <= self.times[-1]:
            raise ValueError("history timestamps must increase")
        self.times.append(float(t))
        self.points.append(np.asarray(p, dtype=float).copy())
        return self

    def __len__(self) -> int:
        return len(self.points)

    def positions(self) -> NDArray[np.float64]:
        return np.array(self.points).reshape(-1, 3)


@dataclass(frozen=True)
class InterventionConfig:
    num_waypoints: int = 10
    search_radius: float = 0.12
    candidates_per_waypoint: int = 8
    horizon: int = 50
    rollback: bool = True
    visit_waypoints: bool = True

    def __post_init__(self):
        if self.num_waypoints < 1 or self.candidates_per_waypoint < 1 or self.horizon < 1:
            raise ValueError("N_w, K and H must all be >= 1")
        if not self.search_radius > 0:
            raise ValueError("search radius must be positive")


@dataclass(frozen=True, eq=False)
class WaypointSet:
    center: NDArray[np.float64]
    radius: float
    points: NDArray[np.float64]
    costs: NDArray[np.float64]
    indices: NDArray[np.int64]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class TrajectoryCandidate:
    waypoint_index: int
    candidate_index: int
    action_chunk: ActionChunk
    eef_path: NDArray[np.float64]
    cumulative_cost: float


def select_rollback(history: HistoryBuffer, field: ScalarField) -> tuple[int, NDArray[np.float64]]:
    """Index and position of the cheapest buffered point; earliest wins ties."""
    if len(history) == 0:
        raise InterventionError("history is empty")
    pts = history.positions()
    costs = query_many(field, pts)
    i = int(np.argmin(costs))  # argmin returns the first occurrence
    return i, pts[i].copy()


def plan_rollback_path(history: HistoryBuffer, index: int) -> NDArray[np.float64]:
    """Buffered points from newest back to ``index`` inclusive."""
    pts = history.positions()
    if not 0 <= index < len(pts):
        raise InterventionError("rollback index outside the history")
    return pts[index:][::-1].copy()


def sample_waypoints(field: ScalarField, center: ArrayLike, r: float, n: int) -> WaypointSet:
    """The ``n`` cheapest voxel centers within ``r`` of ``center``.

    Ties are broken by lexicographic voxel index (i, j, k).
    """
    if not r > 0:
        raise InterventionError("search radius must be positive")
    grid = field.grid
    c = np.asarray(center, dtype=float)
    s, g = grid.voxel_size, grid.resolution
    lo = np.clip(np.floor((c - r - np.array(grid.origin)) / s - 0.5).astype(int), 0, g - 1)
    hi = np.clip(np.ceil((c + r - np.array(grid.origin)) / s - 0.5).astype(int), 0, g - 1)
    if np.any(hi < lo):
        raise InterventionError("search ball does not intersect the grid")
    axes = [np.arange(lo[a], hi[a] + 1) for a in range(3)]
    ii, jj, kk = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    pts = grid.center_of(idx)
    keep = np.sum((pts - c) ** 2, axis=1) <= r * r
    idx, pts = idx[keep], pts[keep]
    if len(idx) == 0:
        raise InterventionError("no voxel centers within the search radius")
    costs = field.values[idx[:, 0], idx[:, 1], idx[:, 2]]
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0], costs))[:n]
    return WaypointSet(c, float(r), pts[order], costs[order], idx[order])


def score_trajectory(field: ScalarField, eef_path: ArrayLike) -> float:
    path = np.asarray(eef_path, dtype=float).reshape(-1, 3)
    if len(path) == 0:
        raise InterventionError("cannot score an empty path")
    return float(np.sum(query_many(field, path)))


def select_best(candidates: list[TrajectoryCandidate]) -> TrajectoryCandidate:
    if not candidates:
        raise InterventionError("no candidates to choose from")
    return min(candidates, key=lambda c: (c.cumulative_cost, c.waypoint_index, c.candidate_index))


class Policy(Protocol):
    def propose(self, observation, k: int, seed: int) -> list[ActionChunk]: ...


class Executor(Protocol):
    history: HistoryBuffer

    @property
    def time(self) -> float: ...

    def latest_field(self) -> ScalarField: ...

    def observation(self): ...

    def drive_path(self, points: NDArray[np.float64]) -> None: ...

    def drive_to(self, point: NDArray[np.float64]) -> None: ...

    def execute_chunk(self, chunk: ActionChunk) -> None: ...

    def observation_at(self, point: NDArray[np.float64]): ...


@dataclass
class InterventionOutcome:
    status: str
    event: dict | None
    rollback_point: list[float] | None = None
    rollback_path_length: int = 0
    waypoints: list[dict] = field(default_factory=list)
    candidates: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    winner: dict | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "event": self.event,
            "rollback_point": self.rollback_point,
            "rollback_path_length": self.rollback_path_length,
            "waypoints": self.waypoints,
            "candidates": self.candidates,
            "skipped": self.skipped,
            "winner": self.winner,
            "timings": self.timings,
        }


def candidate_seed(seed: int, waypoint_index: int) -> int:
    return int(np.random.SeedSequence([seed, waypoint_index]).generate_state(1)[0])


def score_chunks(
    arm: ArmModel, field: ScalarField, chunks: list[ActionChunk], waypoint_index: int
) -> list[TrajectoryCandidate]:
    """FK every chunk and sum field cost along its tool path."""
    if not chunks:
        return []
    h = chunks[0].horizon
    if all(c.horizon == h for c in chunks):
        paths = chunk_to_path(arm, ActionChunk(np.concatenate([c.states for c in chunks]), np.concatenate([c.gripper for c in chunks])))
        costs = query_many(field, paths).reshape(len(chunks), h).sum(axis=1)
        paths = paths.reshape(len(chunks), h, 3)
    else:
        paths = [chunk_to_path(arm, c) for c in chunks]
        costs = [score_trajectory(field, p) for p in paths]
    return [
        TrajectoryCandidate(waypoint_index, k, c, np.asarray(paths[k]), float(costs[k]))
        for k, c in enumerate(chunks)
    ]


def run_intervention(
    event,
    policy: Policy,
    executor: Executor,
    arm: ArmModel,
    config: InterventionConfig = InterventionConfig(),
    seed: int = 0,
) -> InterventionOutcome:
    """Rollback, sample waypoints, gather and score candidates, execute the best.

    Motion failures skip the affected waypoint; if nothing could be scored the
    outcome status is ``"failed"`` and control returns to the caller.
    """
    timings = {"field_s": 0.0, "sampling_scoring_s": 0.0, "proposal_s": 0.0, "travel_wall_s": 0.0}
    sim_start = executor.time
    outcome = InterventionOutcome(status="failed", event=event.to_dict() if event is not None else None)

    def acquire():
        t0 = time.perf_counter()
        f = executor.latest_field()
        timings["field_s"] += time.perf_counter() - t0
        return f

    def travel(fn, *args):
        t0 = time.perf_counter()
        try:
            fn(*args)
        finally:
            timings["travel_wall_s"] += time.perf_counter() - t0

    field_now = acquire()
    center = executor.observation().eef
    if config.rollback and len(executor.history):
        idx, point = select_rollback(executor.history, field_now)
        path = plan_rollback_path(executor.history, idx)
        outcome.rollback_point = [float(v) for v in point]
        outcome.rollback_path_length = len(path)
        try:
            travel(executor.drive_path, path)
            center = point
        except (MotionError, UnreachableError) as exc:
            outcome.skipped.append({"stage": "rollback", "reason": str(exc)})
            center = executor.observation().eef
        field_now = acquire()

    t0 = time.perf_counter()
    try:
        wps = sample_waypoints(field_now, center, config.search_radius, config.num_waypoints)
    except Exception as exc:
        outcome.skipped.append({"stage": "sampling", "reason": str(exc)})
        outcome.timings = _finish_timings(timings, executor.time - sim_start)
        return outcome
    timings["sampling_scoring_s"] += time.perf_counter() - t0
    outcome.waypoints = [
        {"index": i, "position": [float(v) for v in p], "cost": float(c)}
        for i, (p, c) in enumerate(zip(wps.points, wps.costs))
    ]

    pool: list[TrajectoryCandidate] = []
    for i, wp in enumerate(wps.points):
        try:
            if config.visit_waypoints:
                travel(executor.drive_to, wp)
                field_now = acquire()
                obs = executor.observation()
            else:
                obs = executor.observation_at(wp)
        except (MotionError, UnreachableError) as exc:
            outcome.skipped.append({"stage": "waypoint", "waypoint_index": i, "reason": str(exc)})
            continue
        t0 = time.perf_counter()
        chunks = policy.propose(obs, config.candidates_per_waypoint, candidate_seed(seed, i))
        timings["proposal_s"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        scored = score_chunks(arm, field_now, chunks, i)
        timings["sampling_scoring_s"] += time.perf_counter() - t0
        pool.extend(scored)
        outcome.candidates.extend(
            {"waypoint_index": c.waypoint_index, "k": c.candidate_index, "cost": c.cumulative_cost} for c in scored
        )

    if not pool:
        outcome.timings = _finish_timings(timings, executor.time - sim_start)
        return outcome
    best = select_best(pool)
    outcome.winner = {"waypoint_index": best.waypoint_index, "k": best.candidate_index, "cost": best.cumulative_cost}
    try:
        travel(executor.drive_to, wps.points[best.waypoint_index])
        travel(executor.execute_chunk, best.action_chunk)
        outcome.status = "executed"
    except (MotionError, UnreachableError) as exc:
        outcome.skipped.append({"stage": "execute", "reason": str(exc)})
    outcome.timings = _finish_timings(timings, executor.time - sim_start)
    return outcome


def _finish_timings(timings: dict, sim_travel: float) -> dict:
    out = {k: float(v) for k, v in timings.items()}
    out["travel_sim_s"] = float(sim_travel)
    return out
