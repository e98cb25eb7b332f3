"""Proprioceptive stall detection.

An event fires when the tool point has barely moved over the last ``window``
seconds while still being far from the current target. Near-target dwell
(grasping, inserting) therefore never fires.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class DetectorConfig:
    eps_stuck: float = 0.01
    eps_far: float = 0.08
    window: float = 2.0
    cooldown: float = 4.0
    max_interventions: int = 3

    def __post_init__(self):
        if not self.eps_stuck > 0:
            raise ValueError("eps_stuck must be positive")
        if not self.eps_far > self.eps_stuck:
            raise ValueError("eps_far must exceed eps_stuck")
        if not self.window > 0:
            raise ValueError("window must be positive")
        if self.cooldown < 0 or self.max_interventions < 0:
            raise ValueError("cooldown and max_interventions must be non-negative")


@dataclass(frozen=True)
class TrapEvent:
    time: float
    eef_position: NDArray[np.float64]
    displacement: float
    distance_to_target: float

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "eef_position": [float(v) for v in self.eef_position],
            "displacement": self.displacement,
            "distance_to_target": self.distance_to_target,
        }


class TrapDetector:
    """Ring buffer of (t, p) samples plus trigger bookkeeping."""

    def __init__(self, config: DetectorConfig = DetectorConfig(), margin: float | None = None):
        self.config = config
        # keep a little more than one window so the window start is always buffered
        self.margin = config.window if margin is None else margin
        self.samples: deque[tuple[float, NDArray[np.float64]]] = deque()
        self.last_trigger_time: float | None = None
        self.trigger_count = 0

    def observe(self, t: float, p: ArrayLike) -> "TrapDetector":
        if self.samples and t <= self.samples[-1][0]:
            raise ValueError(f"timestamps must increase ({t} after {self.samples[-1][0]})")
        self.samples.append((float(t), np.asarray(p, dtype=float).copy()))
        horizon = t - self.config.window - self.margin
        # never evict the newest sample at or before t - window
        while len(self.samples) > 1 and self.samples[1][0] <= horizon:
            self.samples.popleft()
        return self

    @property
    def span(self) -> float:
        if not self.samples:
            return 0.0
        return self.samples[-1][0] - self.samples[0][0]

    def window_start(self) -> tuple[float, NDArray[np.float64]] | None:
        """Oldest sample with timestamp >= t_now - window."""
        if not self.samples:
            return None
        cutoff = self.samples[-1][0] - self.config.window
        for s in self.samples:
            if s[0] >= cutoff - 1e-9:
                return s
        return None

    def check(self, target_centroid: ArrayLike | None) -> TrapEvent | None:
        cfg = self.config
        if target_centroid is None or self.span < cfg.window - 1e-9:
            return None
        if self.trigger_count >= cfg.max_interventions:
            return None
        t, p = self.samples[-1]
        if self.last_trigger_time is not None and t - self.last_trigger_time < cfg.cooldown:
            return None
        _, p_old = self.window_start()
        displacement = float(np.linalg.norm(p - p_old))
        distance = float(np.linalg.norm(p - np.asarray(target_centroid, dtype=float)))
        if displacement < cfg.eps_stuck and distance > cfg.eps_far:
            self.last_trigger_time = t
            self.trigger_count += 1
            return TrapEvent(t, p.copy(), displacement, distance)
        return None

    def trigger(self, t: float) -> None:
        """Count an externally scheduled intervention (fixed-step ablation)."""
        self.last_trigger_time = t
        self.trigger_count += 1

    def reset_window(self) -> None:
        """Drop buffered motion, e.g. after the arm was driven by an intervention."""
        self.samples.clear()
