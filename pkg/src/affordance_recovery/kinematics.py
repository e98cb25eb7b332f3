"""Serial-arm kinematics for revolute chains.

Each joint rotates about a fixed axis (expressed in the frame of the previous
link) and is followed by a fixed link offset. The tool point is the origin of
the frame after the last offset::

    T = base @ R(a_1, q_1) @ Tr(o_1) @ ... @ R(a_n, q_n) @ Tr(o_n)

Positions are batched over leading dimensions so that whole action chunks can
be mapped to end-effector paths in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray


class KinematicsError(ValueError):
    """Joint vector does not match the arm."""


class UnreachableError(RuntimeError):
    """Inverse kinematics could not reach the requested position."""


@dataclass(frozen=True)
class Joint:
    axis: tuple[float, float, float]
    offset: tuple[float, float, float]
    lower: float = -np.pi
    upper: float = np.pi


@dataclass(frozen=True, eq=False)
class ArmModel:
    joints: tuple[Joint, ...]
    base_pose: NDArray[np.float64] = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("arm needs at least one joint")
        axes = np.array([j.axis for j in self.joints], dtype=float)
        norms = np.linalg.norm(axes, axis=1)
        if np.any(norms == 0):
            raise ValueError("joint axis must be non-zero")
        offsets = np.array([j.offset for j in self.joints], dtype=float)
        if not np.all(np.isfinite(offsets)):
            raise ValueError("link offsets must be finite")
        base = np.asarray(self.base_pose, dtype=float)
        object.__setattr__(self, "base_pose", base)
        axes = axes / norms[:, None]
        cross = np.zeros((len(axes), 3, 3))
        cross[:, 0, 1], cross[:, 0, 2] = -axes[:, 2], axes[:, 1]
        cross[:, 1, 0], cross[:, 1, 2] = axes[:, 2], -axes[:, 0]
        cross[:, 2, 0], cross[:, 2, 1] = -axes[:, 1], axes[:, 0]
        object.__setattr__(self, "_axes", axes)
        object.__setattr__(self, "_cross", cross)
        object.__setattr__(self, "_cross2", cross @ cross)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> NDArray[np.float64]:
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self) -> NDArray[np.float64]:
        return np.array([j.upper for j in self.joints])

    @property
    def reach(self) -> float:
        """Upper bound on the distance from the first joint to the tool point."""
        return float(np.linalg.norm(self._offsets, axis=1).sum())

    @property
    def base_position(self) -> NDArray[np.float64]:
        return self.base_pose[:3, 3].copy()

    def clip(self, q: ArrayLike) -> NDArray[np.float64]:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def within_limits(self, q: ArrayLike) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lower - 1e-12) and np.all(q <= self.upper + 1e-12))


@dataclass(frozen=True, eq=False)
class Pose:
    position: NDArray[np.float64]
    rotation: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class ActionChunk:
    """H joint-space targets plus per-step gripper commands (True = closed)."""

    states: NDArray[np.float64]
    gripper: NDArray[np.bool_]

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        gripper = np.asarray(self.gripper, dtype=bool).reshape(-1)
        if states.shape[0] < 1:
            raise ValueError("action chunk needs at least one state")
        if gripper.shape[0] != states.shape[0]:
            raise ValueError("gripper commands must match the number of states")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "gripper", gripper)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def default_arm() -> ArmModel:
    """4-DOF chain: yaw at the base, then three pitch joints, 0.25 m links."""
    z, y = (0.0, 0.0, 1.0), (0.0, 1.0, 0.0)
    link = 0.25
    return ArmModel(
        joints=(
            Joint(z, (0.0, 0.0, link)),
            Joint(y, (link, 0.0, 0.0), -np.pi / 2, np.pi / 2),
            Joint(y, (link, 0.0, 0.0), -2.8, 2.8),
            Joint(y, (link, 0.0, 0.0), -2.8, 2.8),
        )
    )


_EYE3 = np.eye(3)


def _axis_rotations(k: NDArray[np.float64], kk: NDArray[np.float64], angles: NDArray[np.float64]) -> NDArray[np.float64]:
    # Rodrigues with precomputed cross-product matrices, batched over angles
    s = np.sin(angles)[..., None, None]
    c = np.cos(angles)[..., None, None]
    return _EYE3 + s * k + (1.0 - c) * kk


def _check_dims(arm: ArmModel, q: NDArray[np.float64]) -> None:
    if q.shape[-1] != arm.dof:
        raise KinematicsError(f"expected {arm.dof} joint values, got {q.shape[-1]}")


def forward_frames(arm: ArmModel, q: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Tool rotation (..., 3, 3) and position (..., 3) for joint vectors (..., n)."""
    q = np.asarray(q, dtype=float)
    _check_dims(arm, q)
    lead = q.shape[:-1]
    rot = np.broadcast_to(arm.base_pose[:3, :3], lead + (3, 3)).copy()
    pos = np.broadcast_to(arm.base_pose[:3, 3], lead + (3,)).copy()
    for i in range(arm.dof):
        rot = rot @ _axis_rotations(arm._cross[i], arm._cross2[i], q[..., i])
        pos = pos + rot @ arm._offsets[i]
    return rot, pos


def forward(arm: ArmModel, q: ArrayLike) -> Pose:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise KinematicsError("forward() takes a single joint vector; use positions() for batches")
    rot, pos = forward_frames(arm, q)
    return Pose(position=pos, rotation=rot)


def positions(arm: ArmModel, q: ArrayLike) -> NDArray[np.float64]:
    """End-effector positions for a batch of joint vectors."""
    return forward_frames(arm, q)[1]


def chunk_to_path(arm: ArmModel, chunk: ActionChunk) -> NDArray[np.float64]:
    """FK of every state in the chunk, order preserved -> (H, 3)."""
    return positions(arm, chunk.states)


def jacobian(arm: ArmModel, q: ArrayLike, eps: float = 1e-6) -> NDArray[np.float64]:
    """Positional Jacobian (3, n) by central differences."""
    q = np.asarray(q, dtype=float)
    _check_dims(arm, q)
    n = arm.dof
    probes = np.concatenate([q + eps * np.eye(n), q - eps * np.eye(n)])
    p = positions(arm, probes)
    return ((p[:n] - p[n:]) / (2.0 * eps)).T


@dataclass(frozen=True)
class IKSettings:
    damping: float = 0.05
    max_step: float = 0.2
    max_iterations: int = 200
    tolerance: float = 1e-4


def inverse(
    arm: ArmModel,
    target_position: ArrayLike,
    seed: ArrayLike,
    settings: IKSettings = IKSettings(),
) -> NDArray[np.float64]:
    """Damped-least-squares position IK; orientation is left free.

    Raises
    ------
    UnreachableError
        If the target is beyond the chain's reach or the solver does not
        converge within the iteration budget.
    """
    target = np.asarray(target_position, dtype=float)
    q = arm.clip(seed)
    _check_dims(arm, q)
    first_joint = arm.base_position
    if np.linalg.norm(target - first_joint) > arm.reach + settings.tolerance:
        raise UnreachableError(f"target {target} beyond reach {arm.reach:.3f} m")

    lam2 = settings.damping**2
    eye3 = np.eye(3)
    for _ in range(settings.max_iterations + 1):
        err = target - positions(arm, q)
        if np.linalg.norm(err) < settings.tolerance:
            return q
        jac = jacobian(arm, q)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * eye3, err)
        peak = np.max(np.abs(dq))
        if peak > settings.max_step:
            dq *= settings.max_step / peak
        q = arm.clip(q + dq)
    raise UnreachableError(f"IK did not converge to {target} within {settings.max_iterations} iterations")
