import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affordance_recovery.camera import CameraModel, SegmentationMask, backproject, look_at, segment_target
from affordance_recovery.field import FieldError, ScalarField, WorkspaceGrid
from affordance_recovery.fieldio import from_bytes, read_field, to_bytes, write_field, write_slice_csv
from affordance_recovery.world import SceneObject, World
from affordance_recovery.kinematics import default_arm


def test_dump_layout_is_header_then_x_fastest_float32():
    grid = WorkspaceGrid((0.5, -1.0, 2.0), 0.25, 3)
    v = np.arange(27, dtype=float).reshape(3, 3, 3) / 27
    raw = to_bytes(ScalarField(grid, v))
    magic, ox, oy, oz, s, g = struct.unpack_from("<4s3ddI", raw)
    assert (magic, ox, oy, oz, s, g) == (b"SAF1", 0.5, -1.0, 2.0, 0.25, 3)
    body = np.frombuffer(raw, "<f4", offset=struct.calcsize("<4s3ddI"))
    # second value is voxel (1, 0, 0): x varies fastest
    assert body[1] == np.float32(v[1, 0, 0]) and body[3] == np.float32(v[0, 1, 0]) and body[9] == np.float32(v[0, 0, 1])


@given(st.integers(2, 7), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_dump_round_trip(g, seed):
    rng = np.random.default_rng(seed)
    grid = WorkspaceGrid(tuple(rng.normal(size=3)), float(rng.uniform(0.01, 1)), g)
    f = ScalarField(grid, rng.random(grid.shape))
    back = from_bytes(to_bytes(f))
    assert back.grid == grid
    np.testing.assert_array_equal(back.values, f.values.astype(np.float32))


def test_dump_rejects_garbage(tmp_path):
    with pytest.raises(FieldError):
        from_bytes(b"nope")
    grid = WorkspaceGrid((0, 0, 0), 0.1, 2)
    raw = to_bytes(ScalarField(grid, np.zeros(grid.shape)))
    with pytest.raises(FieldError):
        from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FieldError):
        from_bytes(raw[:-4])
    path = write_field(ScalarField(grid, np.ones(grid.shape)), tmp_path / "f.saf")
    assert np.all(read_field(path).values == 1.0)


def test_slice_csv(tmp_path):
    grid = WorkspaceGrid((0, 0, 0), 0.1, 4)
    v = np.random.default_rng(0).random(grid.shape)
    p = write_slice_csv(ScalarField(grid, v), tmp_path / "s.csv", axis="z", index=2)
    rows = np.loadtxt(p, delimiter=",", skiprows=1)
    assert rows.shape == (16, 4)
    assert np.allclose(rows[:, 2], 0.25)
    for x, y, z, val in rows:
        i, j = int(round(x / 0.1 - 0.5)), int(round(y / 0.1 - 0.5))
        assert abs(val - v[i, j, 2]) <= 5e-7
    with pytest.raises(FieldError):
        write_slice_csv(ScalarField(grid, v), tmp_path / "t.csv", axis="w")


def _camera():
    return CameraModel(100.0, 110.0, 31.5, 23.5, 64, 48, look_at([1.0, 0.3, 0.8], [0.3, 0.0, 0.0]))


def test_look_at_is_a_rigid_transform_facing_target():
    pose = look_at([1.0, 0.3, 0.8], [0.3, 0.0, 0.0])
    R = pose[:3, :3]
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    fwd = np.array([0.3, 0.0, 0.0]) - [1.0, 0.3, 0.8]
    np.testing.assert_allclose(R[:, 2], fwd / np.linalg.norm(fwd))
    assert R[2, 1] < 0  # image y points down in the world
    with pytest.raises(ValueError):
        look_at([0, 0, 1], [0, 0, 0])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_project_backproject_round_trip(seed):
    rng = np.random.default_rng(seed)
    cam = _camera()
    pixels = np.stack([rng.uniform(0, 63, 20), rng.uniform(0, 47, 20)], axis=1)
    depth = rng.uniform(0.2, 3.0, 20)
    pts = backproject(pixels, depth, cam)
    uv, z = cam.project(pts)
    np.testing.assert_allclose(uv, pixels, atol=1e-9)
    np.testing.assert_allclose(z, depth, atol=1e-9)


def test_backproject_drops_invalid_depths_and_reads_images():
    cam = _camera()
    px = np.array([[1, 2], [3, 4], [5, 6]])
    pts = backproject(px, np.array([1.0, np.nan, -1.0]), cam)
    assert pts.shape == (1, 3)
    img = np.full((48, 64), 2.0)
    img[4, 3] = 0.0
    assert backproject(px, img, cam).shape == (2, 3)
    with pytest.raises(ValueError):
        backproject(px, np.ones(2), cam)


def test_segment_target_returns_uv_pixels():
    lab = np.zeros((4, 5), int)
    lab[1, 3] = 2
    lab[2, 0] = 2
    lab[3, 4] = 1
    np.testing.assert_array_equal(segment_target(SegmentationMask(lab), 2), [[3, 1], [0, 2]])
    assert segment_target(SegmentationMask(lab), 9).shape == (0, 2)


def test_rendered_cube_backprojects_onto_its_surface():
    cube = SceneObject("cube", "box", (0.3, 0.0, 0.05), (0.05, 0.05, 0.05))
    world = World({"cube": cube}, (np.array([-1.0] * 3), np.array([1.0] * 3)), default_arm(), np.array([0.0, 0.6, 1.2, 0.9]))
    cam = CameraModel(80.0, 80.0, 31.5, 23.5, 64, 48, look_at([0.9, 0.4, 0.6], [0.3, 0.0, 0.05]))
    depth, seg = world.render(cam)
    px = segment_target(seg, world.label_id("cube"))
    assert len(px) > 50
    pts = backproject(px, depth, cam)
    lo, hi = cube.aabb()
    assert np.all(pts >= lo - 1e-9) and np.all(pts <= hi + 1e-9)
    # each point lies on some face of the box
    on_face = np.isclose(pts, lo, atol=1e-9) | np.isclose(pts, hi, atol=1e-9)
    assert np.all(on_face.any(axis=1))
    assert np.all(depth[seg.labels == 0] == cam.far)


def test_rendered_cylinder_points_on_surface():
    cyl = SceneObject("can", "cylinder", (0.3, 0.1, 0.06), (0.04, 0.06))
    world = World({"can": cyl}, (np.array([-1.0] * 3), np.array([1.0] * 3)), default_arm(), np.array([0.0, 0.6, 1.2, 0.9]))
    cam = CameraModel(80.0, 80.0, 31.5, 23.5, 64, 48, look_at([0.9, 0.4, 0.6], [0.3, 0.1, 0.05]))
    depth, seg = world.render(cam)
    pts = backproject(segment_target(seg, 1), depth, cam)
    r = np.hypot(pts[:, 0] - 0.3, pts[:, 1] - 0.1)
    side = np.isclose(r, 0.04, atol=1e-9)
    cap = np.isclose(pts[:, 2], 0.12, atol=1e-9) & (r <= 0.04 + 1e-9)
    assert len(pts) > 30 and np.all(side | cap)
