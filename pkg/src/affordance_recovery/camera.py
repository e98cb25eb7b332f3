"""Pinhole camera, label masks and depth back-projection.

Camera frame: +z along the optical axis, +x to the right, +y down the image.
Depth images store the camera-frame z of the first surface hit, not the ray
length, so that ``X = (u - cx) * d / fx`` holds directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: NDArray[np.float64] = field(default_factory=lambda: np.eye(4))
    far: float = 5.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        pose = np.asarray(self.pose, dtype=float)
        if pose.shape != (4, 4):
            raise ValueError("camera pose must be a 4x4 transform")
        object.__setattr__(self, "pose", pose)

    @property
    def position(self) -> NDArray[np.float64]:
        return self.pose[:3, 3]

    @property
    def rotation(self) -> NDArray[np.float64]:
        return self.pose[:3, :3]

    def pixel_rays(self) -> NDArray[np.float64]:
        """World-frame ray directions (H, W, 3) scaled so that camera z = 1."""
        u, v = np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        return d @ self.rotation.T

    def project(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """World points -> (pixel coords (..., 2), camera-frame depth (...))."""
        p = np.asarray(points, dtype=float)
        cam = (p - self.position) @ self.rotation
        z = cam[..., 2]
        uv = np.stack([self.fx * cam[..., 0] / z + self.cx, self.fy * cam[..., 1] / z + self.cy], axis=-1)
        return uv, z


def look_at(eye: ArrayLike, target: ArrayLike, up: ArrayLike = (0.0, 0.0, 1.0)) -> NDArray[np.float64]:
    """Camera-to-world transform looking from ``eye`` toward ``target``."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, forward, eye
    return pose


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    labels: NDArray[np.int32]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise ValueError("label image must be 2D")
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def segment_target(mask: SegmentationMask, label_id: int) -> NDArray[np.int64]:
    """Pixels (N, 2) as (u, v) whose label equals ``label_id``, row-major order."""
    v, u = np.nonzero(mask.labels == label_id)
    return np.stack([u, v], axis=1).astype(np.int64)


def backproject(pixels: ArrayLike, depth: ArrayLike, cam: CameraModel) -> NDArray[np.float64]:
    """Lift (u, v) pixels with their depth to world points; invalid depths are dropped.

    ``depth`` is either the full depth image (indexed by the pixels) or one
    value per pixel.
    """
    px = np.asarray(pixels).reshape(-1, 2)
    depth = np.asarray(depth, dtype=float)
    if depth.ndim == 2:
        d = depth[px[:, 1].astype(int), px[:, 0].astype(int)] if len(px) else np.zeros(0)
    else:
        d = depth.reshape(-1)
        if d.shape[0] != px.shape[0]:
            raise ValueError("need one depth value per pixel")
    ok = np.isfinite(d) & (d > 0)
    u, v, d = px[ok, 0].astype(float), px[ok, 1].astype(float), d[ok]
    cam_pts = np.stack([(u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d], axis=1)
    return cam_pts @ cam.rotation.T + cam.position
