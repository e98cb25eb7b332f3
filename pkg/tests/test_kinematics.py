import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from affordance_recovery.kinematics import (
    ActionChunk,
    ArmModel,
    IKSettings,
    Joint,
    KinematicsError,
    UnreachableError,
    chunk_to_path,
    default_arm,
    forward,
    inverse,
    jacobian,
    positions,
)


def homogeneous_fk(arm: ArmModel, q) -> np.ndarray:
    """Oracle: explicit 4x4 products, rotation matrices from scipy rotvecs."""
    T = np.array(arm.base_pose, dtype=float)
    for j, qi in zip(arm.joints, q):
        axis = np.asarray(j.axis, float) / np.linalg.norm(j.axis)
        R = np.eye(4)
        R[:3, :3] = Rotation.from_rotvec(axis * qi).as_matrix()
        D = np.eye(4)
        D[:3, 3] = j.offset
        T = T @ R @ D
    return T


def random_arm(rng) -> ArmModel:
    n = int(rng.integers(1, 7))
    joints = tuple(Joint(tuple(rng.normal(size=3)), tuple(rng.normal(scale=0.3, size=3))) for _ in range(n))
    base = np.eye(4)
    base[:3, :3] = Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix()
    base[:3, 3] = rng.normal(size=3)
    return ArmModel(joints, base)


def test_fk_matches_matrix_composition():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(300):
        arm = random_arm(rng)
        q = rng.uniform(-np.pi, np.pi, arm.dof)
        T = homogeneous_fk(arm, q)
        pose = forward(arm, q)
        worst = max(worst, np.abs(pose.position - T[:3, 3]).max(), np.abs(pose.rotation - T[:3, :3]).max())
    assert worst < 1e-10


def test_batched_fk_equals_single():
    arm = default_arm()
    q = np.random.default_rng(1).uniform(-1, 1, (7, 5, 4))
    batch = positions(arm, q)
    assert batch.shape == (7, 5, 3)
    for idx in np.ndindex(7, 5):
        np.testing.assert_allclose(batch[idx], forward(arm, q[idx]).position, atol=1e-14)


def test_fk_rotation_is_orthonormal():
    arm = default_arm()
    R = forward(arm, [0.3, -0.2, 1.1, 0.4]).rotation
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


@given(st.lists(st.floats(-3.0, 3.0), min_size=4, max_size=4), st.integers(-2, 2))
@settings(max_examples=60, deadline=None)
def test_fk_is_two_pi_periodic(q, k):
    arm = default_arm()
    q = np.array(q)
    shifted = q.copy()
    shifted[0] += 2 * np.pi * k
    np.testing.assert_allclose(forward(arm, q).position, forward(arm, shifted).position, atol=1e-9)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    arm = default_arm()
    for _ in range(50):
        q = rng.uniform(-1.2, 1.2, arm.dof)
        J = jacobian(arm, q)
        h = 1e-5
        # independent check: forward differences from the homogeneous oracle, Richardson-extrapolated
        fd = np.zeros((3, arm.dof))
        for i in range(arm.dof):
            e = np.zeros(arm.dof)
            e[i] = 1.0
            d1 = (homogeneous_fk(arm, q + h * e)[:3, 3] - homogeneous_fk(arm, q - h * e)[:3, 3]) / (2 * h)
            d2 = (homogeneous_fk(arm, q + 2 * h * e)[:3, 3] - homogeneous_fk(arm, q - 2 * h * e)[:3, 3]) / (4 * h)
            fd[:, i] = (4 * d1 - d2) / 3
        assert np.abs(J - fd).max() < 1e-6


def test_jacobian_analytic_for_planar_chain():
    # two unit links rotating about z: closed-form Jacobian
    arm = ArmModel((Joint((0, 0, 1), (1, 0, 0)), Joint((0, 0, 1), (1, 0, 0))))
    a, b = 0.4, 0.9
    J = jacobian(arm, [a, b])
    expect = np.array([
        [-np.sin(a) - np.sin(a + b), -np.sin(a + b)],
        [np.cos(a) + np.cos(a + b), np.cos(a + b)],
        [0.0, 0.0],
    ])
    np.testing.assert_allclose(J, expect, atol=1e-8)


def test_ik_round_trip_on_reachable_targets():
    rng = np.random.default_rng(3)
    arm = default_arm()
    seed = np.array([0.0, 0.6, 1.2, 0.9])
    errors = []
    while len(errors) < 100:
        q_true = arm.clip(seed + rng.uniform(-0.6, 0.6, arm.dof))
        target = forward(arm, q_true).position
        # stay off the base yaw axis, where the base joint is undetermined
        if np.hypot(target[0], target[1]) < 0.1:
            continue
        q = inverse(arm, target, seed, IKSettings(max_iterations=500))
        errors.append(np.linalg.norm(forward(arm, q).position - target))
        assert arm.within_limits(q)
    assert max(errors) < 1e-4


def test_ik_rejects_out_of_reach():
    arm = default_arm()
    with pytest.raises(UnreachableError):
        inverse(arm, [2.0, 0.0, 0.0], np.zeros(4))


def test_dimension_errors():
    arm = default_arm()
    with pytest.raises(KinematicsError):
        forward(arm, [0.0, 0.0])
    with pytest.raises(ValueError):
        ActionChunk(np.zeros((3, 4)), [True, False])


def test_chunk_to_path_preserves_order():
    arm = default_arm()
    states = np.linspace([0, 0.5, 1.0, 0.5], [0.5, 0.7, 1.2, 0.6], 9)
    path = chunk_to_path(arm, ActionChunk(states, np.zeros(9, bool)))
    for i in range(9):
        np.testing.assert_allclose(path[i], forward(arm, states[i]).position)
