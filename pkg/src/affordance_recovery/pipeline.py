"""Perception-to-field pipeline and latest-snapshot publication."""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .camera import CameraModel, backproject, segment_target
from .field import (
    FieldParams,
    FieldWeights,
    ScalarField,
    SceneSnapshot,
    WorkspaceGrid,
    build_affordance_field,
    exempt_mask,
    voxelize,
)
from .world import World


@dataclass(frozen=True, eq=False)
class PublishedField:
    field: ScalarField
    snapshot: SceneSnapshot
    target_label: str
    build_seconds: float
    sequence: int


class FieldPublisher:
    """Single-writer, many-reader holder of the most recent field.

    Readers get a reference to an immutable snapshot, so a half-built field is
    never visible. ``start`` runs a builder callable on a background thread at
    a fixed period for wall-clock use; simulated episodes call ``publish``
    directly on their own cadence instead.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._latest: PublishedField | None = None
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self.count = 0

    def publish(self, item: PublishedField) -> None:
        with self._lock:
            self._latest = item
            self.count += 1

    def latest(self) -> PublishedField | None:
        with self._lock:
            return self._latest

    def start(self, build: Callable[[], PublishedField], period: float = 0.5) -> None:
        if self._thread is not None:
            raise RuntimeError("publisher already running")
        self._stop.clear()

        def loop():
            next_t = time.monotonic()
            while not self._stop.is_set():
                self.publish(build())
                next_t += period
                self._stop.wait(max(0.0, next_t - time.monotonic()))

        self._thread = threading.Thread(target=loop, name="field-builder", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None


class FieldBuilder:
    """Render, segment the stage target, lift to points and build the field.

    Renders are cached on object poses, and finished fields on (poses, target,
    exempted voxels), so a stalled arm in a static scene costs almost nothing.
    """

    def __init__(
        self,
        grid: WorkspaceGrid,
        camera: CameraModel,
        weights: FieldWeights = FieldWeights(),
        params: FieldParams = FieldParams(),
        dropout: float = 0.0,
        seed: int = 0,
        cache_size: int = 64,
        ignore_labels=(),
    ):
        self.grid = grid
        self.camera = camera
        self.weights = weights
        self.params = params
        self.dropout = dropout
        self.seed = seed
        self.cache_size = cache_size
        self.ignore_labels = tuple(ignore_labels)
        self._renders: OrderedDict = OrderedDict()
        self._fields: OrderedDict = OrderedDict()
        self._frame = 0
        self.sequence = 0

    def _perceive(self, world: World):
        key = world.pose_key()
        hit = self._renders.get(key)
        if hit is None:
            depth, seg = world.render(self.camera)
            keep = seg.labels > 0
            for label in self.ignore_labels:
                if label in world.objects:
                    keep &= seg.labels != world.label_id(label)
            fg = np.argwhere(keep)[:, ::-1]
            scene = backproject(fg, depth, self.camera)
            mask = voxelize(scene, self.grid)
            hit = (depth, seg, scene, mask)
            _remember(self._renders, key, hit, self.cache_size)
        return key, hit

    def target_points(self, world: World, label: str, dropped: bool = False) -> NDArray[np.float64]:
        _, (depth, seg, _, _) = self._perceive(world)
        if dropped or label not in world.objects:
            return np.zeros((0, 3))
        pixels = segment_target(seg, world.label_id(label))
        return backproject(pixels, depth, self.camera)

    def perceived_centroid(self, world: World, label: str) -> NDArray[np.float64] | None:
        pts = self.target_points(world, label)
        return pts.mean(axis=0) if len(pts) else None

    def _dropped(self) -> bool:
        if self.dropout <= 0:
            return False
        rng = np.random.default_rng([self.seed, self._frame, 7])
        return bool(rng.random() < self.dropout)

    def build(self, world: World, label: str) -> PublishedField:
        t0 = time.perf_counter()
        key, (_, _, scene, mask) = self._perceive(world)
        dropped = self._dropped()
        self._frame += 1
        target = self.target_points(world, label, dropped)
        eef = world.eef
        kept = exempt_mask(mask, eef, target, self.params)
        fkey = (key, label, dropped, np.packbits(kept.occupied).tobytes())
        snapshot = SceneSnapshot(scene, target, None, eef, world.time)
        field = self._fields.get(fkey)
        if field is None:
            field = build_affordance_field(self.grid, snapshot, self.weights, self.params, scene_mask=mask)
            _remember(self._fields, fkey, field, self.cache_size)
        self.sequence += 1
        return PublishedField(field, snapshot, label, time.perf_counter() - t0, self.sequence)


def _remember(cache: OrderedDict, key, value, size: int) -> None:
    cache[key] = value
    cache.move_to_end(key)
    while len(cache) > size:
        cache.popitem(last=False)
