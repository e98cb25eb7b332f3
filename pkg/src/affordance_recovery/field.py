"""Voxel cost fields over a cubic workspace grid.

Values are stored as ``values[i, j, k]`` with ``i`` along x. Voxel ``(i, j, k)``
spans ``origin + s * [i, i+1) x [j, j+1) x [k, k+1)`` and its center sits at
``origin + s * (index + 0.5)``. All fields produced here are finite; the
``build_*`` helpers and :func:`fuse` return values normalized to [0, 1] with
lower meaning more favorable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from scipy.spatial import cKDTree


class FieldError(ValueError):
    """Invalid grid parameters or incompatible fields."""


@dataclass(frozen=True)
class WorkspaceGrid:
    origin: tuple[float, float, float]
    voxel_size: float
    resolution: int

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        if len(origin) != 3 or not all(np.isfinite(origin)):
            raise FieldError("grid origin must be a finite 3D point")
        if not (np.isfinite(self.voxel_size) and self.voxel_size > 0):
            raise FieldError("voxel_size must be positive")
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise FieldError("grid resolution must be an integer >= 2")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "resolution", int(self.resolution))

    @classmethod
    def from_bounds(cls, lower: ArrayLike, upper: ArrayLike, resolution: int) -> "WorkspaceGrid":
        """Cubic grid starting at ``lower`` whose side covers the largest extent."""
        lower = np.asarray(lower, dtype=float)
        extent = float(np.max(np.asarray(upper, dtype=float) - lower))
        return cls(tuple(lower), extent / resolution, resolution)

    @property
    def shape(self) -> tuple[int, int, int]:
        g = self.resolution
        return (g, g, g)

    @property
    def extent(self) -> float:
        return self.resolution * self.voxel_size

    @property
    def lower(self) -> NDArray[np.float64]:
        return np.array(self.origin)

    @property
    def upper(self) -> NDArray[np.float64]:
        return np.array(self.origin) + self.extent

    @property
    def diagonal(self) -> float:
        return self.extent * np.sqrt(3.0)

    def axis_centers(self) -> NDArray[np.float64]:
        """(3, G) voxel-center coordinates along each axis."""
        idx = np.arange(self.resolution) + 0.5
        return np.array(self.origin)[:, None] + self.voxel_size * idx[None, :]

    def centers(self) -> NDArray[np.float64]:
        """(G, G, G, 3) voxel centers."""
        ax = self.axis_centers()
        return np.stack(np.meshgrid(ax[0], ax[1], ax[2], indexing="ij"), axis=-1)

    def center_of(self, index: ArrayLike) -> NDArray[np.float64]:
        return np.array(self.origin) + self.voxel_size * (np.asarray(index, dtype=float) + 0.5)

    def index_of(self, points: ArrayLike) -> NDArray[np.int64]:
        """Floor voxel index per point (may fall outside [0, G))."""
        p = np.asarray(points, dtype=float)
        return np.floor((p - np.array(self.origin)) / self.voxel_size).astype(np.int64)

    def contains(self, points: ArrayLike) -> NDArray[np.bool_]:
        idx = self.index_of(points)
        return np.all((idx >= 0) & (idx < self.resolution), axis=-1)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: WorkspaceGrid
    values: NDArray[np.float64]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise FieldError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise FieldError("field values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def query(self, position: ArrayLike) -> float:
        return query(self, position)

    def query_many(self, positions: ArrayLike) -> NDArray[np.float64]:
        return query_many(self, positions)


@dataclass(frozen=True, eq=False)
class OccupancyMask:
    grid: WorkspaceGrid
    occupied: NDArray[np.bool_]

    def __post_init__(self):
        occ = np.asarray(self.occupied, dtype=bool)
        if occ.shape != self.grid.shape:
            raise FieldError(f"mask shape {occ.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "occupied", occ)

    @property
    def count(self) -> int:
        return int(self.occupied.sum())


@dataclass(frozen=True, eq=False)
class SceneSnapshot:
    scene_points: NDArray[np.float64]
    target_points: NDArray[np.float64]
    target_centroid: NDArray[np.float64] | None
    eef_position: NDArray[np.float64]
    timestamp: float

    def __post_init__(self):
        scene = np.asarray(self.scene_points, dtype=float).reshape(-1, 3)
        target = np.asarray(self.target_points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "scene_points", scene)
        object.__setattr__(self, "target_points", target)
        object.__setattr__(self, "eef_position", np.asarray(self.eef_position, dtype=float))
        if len(target):
            object.__setattr__(self, "target_centroid", target.mean(axis=0))
        elif self.target_centroid is not None:
            object.__setattr__(self, "target_centroid", np.asarray(self.target_centroid, dtype=float))


@dataclass(frozen=True)
class FieldWeights:
    w_target: float = 0.7
    w_obst: float = 0.3

    def __post_init__(self):
        if self.w_target < 0 or self.w_obst < 0 or self.w_target + self.w_obst <= 0:
            raise FieldError("field weights must be non-negative with a positive sum")


@dataclass(frozen=True)
class FieldParams:
    sigma: float = 1.0
    eef_exempt_radius: float = 0.04
    target_buffer_radius: float = 0.05
    influence_voxels: float = 6.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise FieldError("sigma must be positive")
        for name in ("eef_exempt_radius", "target_buffer_radius"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise FieldError(f"{name} must be finite and non-negative")
        if not (np.isfinite(self.influence_voxels) and self.influence_voxels > 0):
            raise FieldError("influence_voxels must be positive")


def normalize(values: ArrayLike) -> NDArray[np.float64]:
    """Min-max to [0, 1]; a constant array maps to zeros."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


def voxelize(points: ArrayLike, grid: WorkspaceGrid) -> OccupancyMask:
    occ = np.zeros(grid.shape, dtype=bool)
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p):
        idx = grid.index_of(p)
        keep = np.all((idx >= 0) & (idx < grid.resolution), axis=1)
        idx = idx[keep]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return OccupancyMask(grid, occ)


def build_target_field(grid: WorkspaceGrid, centroid: ArrayLike, normalized: bool = True) -> ScalarField:
    c = np.asarray(centroid, dtype=float)
    ax = grid.axis_centers()
    dx = (ax[0] - c[0])[:, None, None]
    dy = (ax[1] - c[1])[None, :, None]
    dz = (ax[2] - c[2])[None, None, :]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    return ScalarField(grid, normalize(dist) if normalized else dist)


def distance_transform(mask: OccupancyMask) -> ScalarField:
    """Metric distance from each voxel center to the nearest occupied center.

    With nothing occupied every voxel gets the grid diagonal.
    """
    grid = mask.grid
    if not mask.occupied.any():
        return ScalarField(grid, np.full(grid.shape, grid.diagonal))
    dist = ndimage.distance_transform_edt(~mask.occupied, sampling=grid.voxel_size)
    return ScalarField(grid, dist)


def exempt_mask(
    mask: OccupancyMask,
    eef_position: ArrayLike,
    target_points: ArrayLike,
    params: FieldParams,
) -> OccupancyMask:
    """Clear occupied voxels near the EEF and inside the target buffer zone."""
    occ = mask.occupied.copy()
    idx = np.argwhere(occ)
    if len(idx) == 0:
        return OccupancyMask(mask.grid, occ)
    centers = mask.grid.center_of(idx)
    clear = np.linalg.norm(centers - np.asarray(eef_position, dtype=float), axis=1) <= params.eef_exempt_radius
    tp = np.asarray(target_points, dtype=float).reshape(-1, 3)
    if len(tp):
        d, _ = cKDTree(tp).query(centers, distance_upper_bound=params.target_buffer_radius + 1e-12)
        clear |= d <= params.target_buffer_radius
    gone = idx[clear]
    occ[gone[:, 0], gone[:, 1], gone[:, 2]] = False
    return OccupancyMask(mask.grid, occ)


def build_obstacle_field(
    grid: WorkspaceGrid,
    scene_mask: OccupancyMask,
    eef_position: ArrayLike,
    target_points: ArrayLike,
    params: FieldParams = FieldParams(),
) -> ScalarField:
    if scene_mask.grid != grid:
        raise FieldError("scene mask was built on a different grid")
    kept = exempt_mask(scene_mask, eef_position, target_points, params)
    dt = distance_transform(kept).values
    d_influence = params.influence_voxels * grid.voxel_size
    repulsion = np.maximum(0.0, 1.0 - dt / d_influence)
    return ScalarField(grid, normalize(repulsion))


def smooth_values(values: ArrayLike, sigma: float) -> NDArray[np.float64]:
    """Separable Gaussian, truncated at 3 sigma, edge-replicated. Not normalized."""
    if not sigma > 0:
        raise FieldError("sigma must be positive")
    return ndimage.gaussian_filter(np.asarray(values, dtype=float), sigma, mode="nearest", truncate=3.0)


def gaussian_smooth(field: ScalarField, sigma: float) -> ScalarField:
    return ScalarField(field.grid, normalize(smooth_values(field.values, sigma)))


def fuse(target_field: ScalarField, obstacle_field: ScalarField, weights: FieldWeights = FieldWeights()) -> ScalarField:
    if target_field.grid != obstacle_field.grid:
        raise FieldError("cannot fuse fields defined on different grids")
    raw = weights.w_target * target_field.values + weights.w_obst * obstacle_field.values
    return ScalarField(target_field.grid, normalize(raw))


def build_affordance_field(
    grid: WorkspaceGrid,
    snapshot: SceneSnapshot,
    weights: FieldWeights = FieldWeights(),
    params: FieldParams = FieldParams(),
    scene_mask: OccupancyMask | None = None,
) -> ScalarField:
    """Target attraction plus obstacle repulsion, each smoothed, fused, normalized.

    Without a target centroid the target term is dropped (constant) and only
    obstacles shape the field.
    """
    if scene_mask is None:
        scene_mask = voxelize(snapshot.scene_points, grid)
    obst = build_obstacle_field(grid, scene_mask, snapshot.eef_position, snapshot.target_points, params)
    obst = gaussian_smooth(obst, params.sigma)
    if snapshot.target_centroid is None:
        target = ScalarField(grid, np.zeros(grid.shape))
    else:
        target = gaussian_smooth(build_target_field(grid, snapshot.target_centroid), params.sigma)
    return fuse(target, obst, weights)


def _interp_setup(grid: WorkspaceGrid, p: NDArray[np.float64]):
    u = (p - np.array(grid.origin)) / grid.voxel_size - 0.5
    g = grid.resolution
    # tolerance in index units so boundary centres survive float rounding
    inside = np.all((u >= -1e-9) & (u <= g - 1 + 1e-9), axis=-1)
    u = np.where(np.isfinite(u), u, 0.0)
    # snap onto voxel centres so that centre queries return stored values exactly
    r = np.rint(u)
    u = np.where(np.abs(u - r) < 1e-9, r, u)
    base = np.clip(np.floor(u), 0, g - 2).astype(np.int64)
    frac = np.clip(u - base, 0.0, 1.0)
    return inside, base, frac


def query_many(field: ScalarField, positions: ArrayLike) -> NDArray[np.float64]:
    """Trilinear interpolation; points outside the voxel-center hull cost 1.0."""
    p = np.asarray(positions, dtype=float)
    lead = p.shape[:-1]
    p = p.reshape(-1, 3)
    inside, base, f = _interp_setup(field.grid, p)
    v = field.values
    i, j, k = base[:, 0], base[:, 1], base[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c00 = v[i, j, k] * (1 - fx) + v[i + 1, j, k] * fx
    c10 = v[i, j + 1, k] * (1 - fx) + v[i + 1, j + 1, k] * fx
    c01 = v[i, j, k + 1] * (1 - fx) + v[i + 1, j, k + 1] * fx
    c11 = v[i, j + 1, k + 1] * (1 - fx) + v[i + 1, j + 1, k + 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz
    out = np.where(inside & np.all(np.isfinite(p), axis=1), out, 1.0)
    return out.reshape(lead)


def query(field: ScalarField, position: ArrayLike) -> float:
    return float(query_many(field, np.asarray(position, dtype=float).reshape(1, 3))[0])
