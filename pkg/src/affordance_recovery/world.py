"""Kinematic tabletop world: axis-aligned objects, a position-controlled arm and
a proximity gripper.

There is no dynamics. A closing gripper attaches the nearest graspable object
whose center lies within ``grasp_radius`` of the tool point; opening releases
it, and the released object drops straight down onto whatever supports it
(an open container's floor, another object's top, or the table).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .camera import CameraModel, SegmentationMask
from .kinematics import ArmModel, default_arm, positions

SHAPES = ("box", "cylinder")


class ConfigError(ValueError):
    """Invalid scenario, layout or task definition."""


@dataclass(frozen=True)
class SceneObject:
    """``size`` is (hx, hy, hz) half-extents for a box, (radius, half_height) for a cylinder."""

    label: str
    shape: str
    position: tuple[float, float, float]
    size: tuple[float, ...]
    graspable: bool = False
    container: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r} for {self.label!r}")
        need = 3 if self.shape == "box" else 2
        if len(self.size) != need or min(self.size) <= 0:
            raise ConfigError(f"{self.label!r}: {self.shape} needs {need} positive size values")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))

    @property
    def center(self) -> NDArray[np.float64]:
        return np.array(self.position)

    @property
    def half_extents(self) -> NDArray[np.float64]:
        if self.shape == "box":
            return np.array(self.size)
        r, hh = self.size
        return np.array([r, r, hh])

    @property
    def half_height(self) -> float:
        return float(self.half_extents[2])

    @property
    def bottom(self) -> float:
        return self.position[2] - self.half_height

    @property
    def top(self) -> float:
        return self.position[2] + self.half_height

    def aabb(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        c, h = self.center, self.half_extents
        return c - h, c + h

    def footprint_contains(self, xy: ArrayLike) -> bool:
        d = np.asarray(xy, dtype=float) - self.center[:2]
        if self.shape == "box":
            return bool(np.all(np.abs(d) <= self.half_extents[:2]))
        return bool(np.hypot(*d) <= self.size[0])

    def moved(self, position: ArrayLike) -> "SceneObject":
        return replace(self, position=tuple(float(v) for v in position))


@dataclass
class StepResult:
    eef: NDArray[np.float64]
    grasped: str | None = None
    released: str | None = None
    clamped: bool = False


@dataclass
class World:
    objects: dict[str, SceneObject]
    bounds: tuple[NDArray[np.float64], NDArray[np.float64]]
    arm: ArmModel = field(default_factory=default_arm)
    q: NDArray[np.float64] = field(default_factory=lambda: np.zeros(4))
    gripper_closed: bool = False
    attached: str | None = None
    attach_offset: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0
    dt: float = 0.05
    grasp_radius: float = 0.02
    max_joint_speed: float = 2.0
    max_eef_speed: float = 0.3
    static_labels: frozenset[str] = frozenset({"table"})

    def __post_init__(self):
        lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        self.bounds = (lo, hi)
        self.q = self.arm.clip(self.q)
        self._eef = positions(self.arm, self.q)

    # ------------------------------------------------------------------ queries
    @property
    def eef(self) -> NDArray[np.float64]:
        return self._eef.copy()

    def labels(self) -> list[str]:
        return list(self.objects)

    def label_id(self, label: str) -> int:
        """1-based render id in insertion order; 0 is background."""
        return self.labels().index(label) + 1

    def get(self, label: str) -> SceneObject:
        try:
            return self.objects[label]
        except KeyError:
            raise ConfigError(f"no object labelled {label!r}") from None

    def pose_key(self) -> tuple:
        """Hashable summary of everything the camera sees."""
        return tuple((o.label, o.position) for o in self.objects.values())

    def clone(self) -> "World":
        return copy.deepcopy(self)

    # ----------------------------------------------------------------- validity
    def validate_layout(self) -> None:
        lo, hi = self.bounds
        objs = list(self.objects.values())
        for o in objs:
            a, b = o.aabb()
            if np.any(a < lo - 1e-9) or np.any(b > hi + 1e-9):
                raise ConfigError(f"object {o.label!r} leaves the workspace bounds")
        for i, o1 in enumerate(objs):
            for o2 in objs[i + 1 :]:
                if _overlap(o1, o2):
                    raise ConfigError(f"objects {o1.label!r} and {o2.label!r} overlap")

    # ------------------------------------------------------------------ dynamics
    def set_joints(self, q: ArrayLike) -> None:
        """Teleport the arm (used for episode resets only)."""
        self.q = self.arm.clip(q)
        self._eef = positions(self.arm, self.q)
        self._carry()

    def step(self, q_cmd: ArrayLike, gripper_closed: bool) -> StepResult:
        q_cmd = np.asarray(q_cmd, dtype=float)
        clamped = not self.arm.within_limits(q_cmd)
        q_cmd = self.arm.clip(q_cmd)
        dq = q_cmd - self.q
        peak = np.max(np.abs(dq))
        cap = self.max_joint_speed * self.dt
        if peak > cap:
            dq *= cap / peak
        q_new = self.q + dq
        p_new = positions(self.arm, q_new)
        limit = self.max_eef_speed * self.dt
        # FK is nonlinear, so shrink until the tool-point move is inside the cap
        for _ in range(20):
            move = np.linalg.norm(p_new - self._eef)
            if move <= limit:
                break
            dq *= 0.98 * limit / move
            q_new = self.q + dq
            p_new = positions(self.arm, q_new)
        else:
            q_new, p_new = self.q.copy(), self._eef.copy()
        self.q, self._eef = q_new, p_new
        self.time = round(self.time + self.dt, 9)

        result = StepResult(eef=self._eef.copy(), clamped=clamped)
        closing = gripper_closed and not self.gripper_closed
        opening = self.gripper_closed and not gripper_closed
        self.gripper_closed = bool(gripper_closed)
        if closing and self.attached is None:
            label = self._grasp_candidate()
            if label is not None:
                self.attached = label
                self.attach_offset = self.objects[label].center - self._eef
                result.grasped = label
        elif opening and self.attached is not None:
            result.released = self.attached
            self._release()
        self._carry()
        return result

    def _grasp_candidate(self) -> str | None:
        best, best_d = None, self.grasp_radius
        for o in self.objects.values():
            if not o.graspable:
                continue
            d = float(np.linalg.norm(o.center - self._eef))
            if d <= best_d:
                best, best_d = o.label, d
        return best

    def _carry(self) -> None:
        if self.attached is not None:
            obj = self.objects[self.attached]
            self.objects[self.attached] = obj.moved(self._eef + self.attach_offset)

    def _release(self) -> None:
        label = self.attached
        obj = self.objects[label]
        self.attached = None
        self.attach_offset = np.zeros(3)
        support = self.support_height(obj)
        pos = obj.center
        pos[2] = support + obj.half_height
        self.objects[label] = obj.moved(pos)

    def support_height(self, obj: SceneObject) -> float:
        """Height the object would come to rest at if dropped straight down."""
        xy = obj.center[:2]
        best = -np.inf
        for other in self.objects.values():
            if other.label == obj.label or not other.footprint_contains(xy):
                continue
            if other.container:
                # falls through the open top onto a thin floor
                h = other.bottom + 0.1 * (other.top - other.bottom)
                if h <= obj.bottom + 1e-9:
                    best = max(best, h)
            elif other.top <= obj.bottom + 1e-9:
                best = max(best, other.top)
        return float(best if np.isfinite(best) else self.bounds[0][2])

    # ----------------------------------------------------------------- rendering
    def render(self, cam: CameraModel) -> tuple[NDArray[np.float64], SegmentationMask]:
        return render(self, cam)


def _overlap(a: SceneObject, b: SceneObject, tol: float = 1e-6) -> bool:
    a0, a1 = a.aabb()
    b0, b1 = b.aabb()
    if np.any(a1 - tol <= b0) or np.any(b1 - tol <= a0):
        return False
    if a.shape == "cylinder" and b.shape == "cylinder":
        return bool(np.hypot(*(a.center[:2] - b.center[:2])) < a.size[0] + b.size[0] - tol)
    return True


def _ray_box(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    hit = (tmax >= tmin) & (tmax > 0)
    return np.where(hit, np.where(tmin > 0, tmin, np.inf), np.inf)


def _ray_cylinder(origin, dirs, center, radius, half_height):
    ox, oy = origin[0] - center[0], origin[1] - center[1]
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    z_lo, z_hi = center[2] - half_height, center[2] + half_height
    best = np.full(dirs.shape[:-1], np.inf)
    # side wall
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - radius * radius
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
            z = origin[2] + t * dz
            ok = (disc >= 0) & (a > 0) & (t > 0) & (z >= z_lo) & (z <= z_hi)
            best = np.where(ok & (t < best), t, best)
        # caps
        for zc in (z_lo, z_hi):
            t = (zc - origin[2]) / dz
            px, py = ox + t * dx, oy + t * dy
            ok = (t > 0) & (px * px + py * py <= radius * radius)
            best = np.where(ok & (t < best), t, best)
    return best


def render(world: World, cam: CameraModel) -> tuple[NDArray[np.float64], SegmentationMask]:
    """Depth (camera-frame z) and per-pixel object ids by analytic ray casting.

    The arm itself is not drawn.
    """
    dirs = cam.pixel_rays()
    origin = cam.position
    depth = np.full(dirs.shape[:-1], np.inf)
    labels = np.zeros(dirs.shape[:-1], dtype=np.int32)
    for i, obj in enumerate(world.objects.values(), start=1):
        if obj.shape == "box":
            lo, hi = obj.aabb()
            t = _ray_box(origin, dirs, lo, hi)
        else:
            t = _ray_cylinder(origin, dirs, obj.center, obj.size[0], obj.size[1])
        nearer = t < depth
        depth = np.where(nearer, t, depth)
        labels = np.where(nearer, i, labels)
    far = ~np.isfinite(depth) | (depth > cam.far)
    depth[far] = cam.far
    labels[far] = 0
    return depth, SegmentationMask(labels)
