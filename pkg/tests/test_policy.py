import numpy as np
import pytest

from affordance_recovery.episode import nominal_for, run_episode
from affordance_recovery.kinematics import positions
from affordance_recovery.policy import EnsemblePolicy, MemorizingPolicy, Observation, PolicyConfig
from affordance_recovery.scenario import builtin_scenario


@pytest.fixture(scope="module")
def scenario():
    return builtin_scenario("place_carrot")


@pytest.fixture(scope="module")
def nominal(scenario):
    return nominal_for(scenario)


def _obs(nominal, i, centroid=None, stage=0):
    return Observation(nominal.eef[i].copy(), nominal.states[i].copy(), bool(nominal.gripper[i]), stage, centroid)


def test_propose_is_pure(scenario, nominal):
    pol = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(conditioning_degradation=0.5))
    obs = _obs(nominal, 30, nominal.centroids[0] + [0.02, 0, 0])
    a = pol.propose(obs, 8, 123)
    b = pol.propose(obs, 8, 123)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.states, y.states)
        np.testing.assert_array_equal(x.gripper, y.gripper)
    c = pol.propose(obs, 8, 124)
    assert any(not np.array_equal(x.states, y.states) for x, y in zip(a, c))


def test_zero_temperature_without_capture_gives_identical_candidates(scenario, nominal):
    pol = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.0))
    chunks = pol.propose(_obs(nominal, 10), 8, 7)
    for c in chunks[1:]:
        np.testing.assert_array_equal(c.states, chunks[0].states)
    assert chunks[0].horizon == 50


def test_positive_temperature_gives_distinct_candidates(scenario, nominal):
    pol = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.05))
    chunks = pol.propose(_obs(nominal, 10), 8, 7)
    for i in range(8):
        for j in range(i + 1, 8):
            assert not np.allclose(chunks[i].states, chunks[j].states)


def test_progress_matching_resumes_from_nearest_point(scenario, nominal):
    pol = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.0))
    for i in (5, 40, 120):
        m = pol.progress_index(nominal.eef[i], bool(nominal.gripper[i]))
        assert np.linalg.norm(nominal.eef[m] - nominal.eef[i]) == 0.0
    chunk = pol.propose(_obs(nominal, 40), 1, 0)[0]
    np.testing.assert_allclose(chunk.states[0], nominal.states[41])


def test_capture_servos_toward_true_target(scenario, nominal):
    """Inside the capture radius the continuation is translated onto the target."""
    pol = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.0))
    delta = np.array([0.03, 0.0, 0.0])
    c0 = nominal.centroids[0]
    grasp_i = int(np.flatnonzero(nominal.gripper)[0])
    i = grasp_i - 20
    eef = nominal.eef[i] + delta
    obs = Observation(eef, scenario.home_joints(), False, 0, c0 + delta)
    assert pol.captured(obs)
    chunk = pol.propose(obs, 1, 0)[0]
    path = positions(scenario.arm, chunk.states)
    # the step that closes the gripper is over the shifted target, not the memorized one
    k = int(np.flatnonzero(chunk.gripper)[0])
    assert np.linalg.norm(path[k] - (nominal.eef[grasp_i] + delta)) < 2e-3
    far = Observation(eef, obs.q, False, 0, c0 + np.array([0.2, 0, 0]))
    assert not pol.captured(far)


def test_full_degradation_ignores_capture(scenario, nominal):
    c0 = nominal.centroids[0]
    obs = _obs(nominal, 30, c0 + [0.03, 0, 0])
    blind = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.0, capture_radius=0.0)).propose(obs, 1, 0)[0]
    deg = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.0, conditioning_degradation=1.0)).propose(obs, 4, 0)
    for c in deg:
        np.testing.assert_array_equal(c.states, blind.states)


@pytest.mark.parametrize("dx", [0.13, 0.16])
def test_trap_is_guaranteed_beyond_twice_capture_radius(dx):
    s = builtin_scenario("place_carrot", perturbation={"kind": "position_shift", "label": "carrot", "dx": dx})
    rec = run_episode(s, 0, "baseline")
    assert not rec.success
    end = np.array(rec.steps[-1]["eef"])
    carrot = s.make_world(0).get("carrot").center
    assert np.linalg.norm(end - carrot) > s.detector.eps_far
    assert len(rec.events) >= 1


def test_ensemble_concatenates_pools(scenario, nominal):
    a = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.01))
    b = MemorizingPolicy(scenario.arm, nominal, PolicyConfig(temperature=0.02))
    out = EnsemblePolicy([a, b]).propose(_obs(nominal, 10), 3, 5)
    assert len(out) == 6
    with pytest.raises(ValueError):
        EnsemblePolicy([])


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(conditioning_degradation=1.5)
    with pytest.raises(ValueError):
        PolicyConfig(horizon=0)
