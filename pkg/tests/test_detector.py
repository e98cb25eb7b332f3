import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affordance_recovery.detector import DetectorConfig, TrapDetector


def oracle_events(ts, ps, target, cfg):
    """Literal conjunction of the two threshold tests over the raw trace."""
    events, last, count = [], None, 0
    for i, t in enumerate(ts):
        if t - ts[0] < cfg.window - 1e-9 or count >= cfg.max_interventions:
            continue
        if last is not None and t - last < cfg.cooldown:
            continue
        j = next(k for k in range(i + 1) if ts[k] >= t - cfg.window - 1e-9)
        stuck = np.linalg.norm(ps[i] - ps[j]) < cfg.eps_stuck
        far = np.linalg.norm(ps[i] - target) > cfg.eps_far
        if stuck and far:
            events.append(i)
            last, count = t, count + 1
    return events


def random_trace(rng):
    n = int(rng.integers(20, 160))
    dt = rng.choice([0.05, 0.1]) if rng.random() < 0.7 else None
    ts = np.cumsum(rng.uniform(0.02, 0.15, n)) if dt is None else np.arange(1, n + 1) * dt
    target = rng.uniform(-0.5, 0.5, 3)
    p = [target + rng.normal(0, 0.15, 3)]
    for _ in range(n - 1):
        mode = rng.random()
        if mode < 0.4:  # dwell with jitter
            step = rng.normal(0, rng.choice([1e-4, 1e-3, 4e-3]), 3)
        elif mode < 0.7:  # drift
            step = rng.normal(0, 0.01, 3)
        else:  # head to the target
            step = 0.1 * (target - p[-1])
        p.append(p[-1] + step)
    return ts, np.array(p), target


def run_detector(ts, ps, target, cfg):
    det = TrapDetector(cfg)
    fired = []
    for i, (t, p) in enumerate(zip(ts, ps)):
        det.observe(t, p)
        ev = det.check(target)
        if ev is not None:
            assert ev.displacement < cfg.eps_stuck and ev.distance_to_target > cfg.eps_far
            fired.append(i)
    return fired


def test_detector_matches_oracle_on_1000_traces():
    rng = np.random.default_rng(20)
    total = 0
    for _ in range(1000):
        cfg = DetectorConfig(
            eps_stuck=float(rng.choice([0.005, 0.01, 0.02])),
            eps_far=float(rng.choice([0.05, 0.08, 0.15])),
            window=float(rng.choice([0.5, 1.0, 2.0])),
            cooldown=float(rng.choice([0.0, 1.0, 4.0])),
            max_interventions=int(rng.integers(1, 5)),
        )
        ts, ps, target = random_trace(rng)
        got = run_detector(ts, ps, target, cfg)
        assert got == oracle_events(ts, ps, target, cfg)
        total += len(got)
    assert total > 100  # the traces do exercise firing


def test_no_false_trigger_during_near_target_dwell():
    rng = np.random.default_rng(21)
    cfg = DetectorConfig()
    for _ in range(200):
        target = rng.uniform(-0.3, 0.3, 3)
        det = TrapDetector(cfg)
        d = rng.normal(size=3)
        p0 = target + d / np.linalg.norm(d) * rng.uniform(0, cfg.eps_far - 0.002)
        for i in range(200):
            det.observe(0.05 * (i + 1), p0 + rng.normal(0, 1e-4, 3))
            assert det.check(target) is None


def test_examples_from_the_contract():
    cfg = DetectorConfig()
    target = np.zeros(3)
    far = TrapDetector(cfg)
    near = TrapDetector(cfg)
    moving = TrapDetector(cfg)
    ev_far = ev_near = ev_move = None
    for i in range(60):
        t = 0.05 * (i + 1)
        far.observe(t, [0.2, 0, 0])
        near.observe(t, [0.05, 0, 0])
        moving.observe(t, [0.2 + 0.025 * t, 0, 0])
        ev_far = ev_far or far.check(target)
        ev_near = ev_near or near.check(target)
        ev_move = ev_move or moving.check(target)
    assert ev_far is not None and np.isclose(ev_far.time, 2.05)
    assert ev_near is None and ev_move is None


def test_observe_rejects_non_increasing_time_and_evicts():
    det = TrapDetector(DetectorConfig(window=1.0))
    det.observe(0.0, [0, 0, 0])
    assert len(det.samples) == 1
    with pytest.raises(ValueError):
        det.observe(0.0, [0, 0, 0])
    for i in range(1, 200):
        det.observe(0.05 * i, [0, 0, 0])
    assert det.span >= 1.0
    assert det.samples[0][0] > 0.0
    assert det.span <= 2.0 + 0.05 + 1e-9


def test_none_target_silences_detector():
    det = TrapDetector()
    for i in range(100):
        det.observe(0.05 * i, [1, 1, 1])
        assert det.check(None) is None


@given(st.floats(0.001, 0.05), st.floats(0.0, 0.009))
@settings(max_examples=40, deadline=None)
def test_raising_eps_stuck_never_removes_first_event(extra, jitter):
    # a trace that fires at eps_stuck also fires, no later, with a looser threshold
    rng = np.random.default_rng(int(jitter * 1e6))
    ts = np.arange(1, 81) * 0.05
    ps = np.array([0.3, 0, 0]) + rng.normal(0, jitter / 3 + 1e-6, (80, 3))
    tight = run_detector(ts, ps, np.zeros(3), DetectorConfig(eps_stuck=0.01, cooldown=100))
    loose = run_detector(ts, ps, np.zeros(3), DetectorConfig(eps_stuck=0.01 + extra, cooldown=100))
    if tight:
        assert loose and loose[0] <= tight[0]


def test_cooldown_and_cap():
    cfg = DetectorConfig(cooldown=1.0, max_interventions=2)
    det = TrapDetector(cfg)
    times = []
    for i in range(200):
        t = 0.05 * (i + 1)
        det.observe(t, [1, 0, 0])
        ev = det.check(np.zeros(3))
        if ev:
            times.append(ev.time)
    assert len(times) == 2 and times[1] - times[0] >= 1.0
    det2 = TrapDetector(cfg)
    det2.trigger(0.0)
    det2.trigger(0.1)
    for i in range(100):
        det2.observe(0.05 * (i + 1), [1, 0, 0])
        assert det2.check(np.zeros(3)) is None


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(eps_stuck=0.1, eps_far=0.05)
    with pytest.raises(ValueError):
        DetectorConfig(window=0)
