"""Geometric kernel tests: every expected value is hand-computed or comes
from an independent brute-force evaluation."""

import math

import numpy as np
import pytest

from conftest import random_pose
from pipegraph.errors import DegenerateCloud, DomainError, InvalidDepth
from pipegraph.geometry import (
    erode_mask,
    intrinsics_from_fov,
    look_at_pose,
    mask_to_cloud,
    project,
    project_points,
    quat_from_matrix,
    rasterize_polygons,
    rotated_bbox,
    unproject,
    unproject_pixels,
    voxel_downsample,
    write_ply,
)
from pipegraph.model import CameraPose, DepthMap


class TestIntrinsicsFromFov:
    def test_full_hd_114_degrees(self):
        # independent evaluation: 1920 / (2 * tan(57 deg))
        expected = 1920.0 / (2.0 * math.tan(math.radians(57.0)))
        intr = intrinsics_from_fov(1920, 1080, 114.0)
        assert intr.fx == pytest.approx(expected, abs=1e-9)
        assert intr.fx == pytest.approx(623.43, abs=0.01)
        assert intr.fy == intr.fx
        assert (intr.cx, intr.cy) == (960.0, 540.0)

    def test_90_degrees_square(self):
        intr = intrinsics_from_fov(100, 100, 90.0)
        assert intr.fx == pytest.approx(50.0, abs=1e-12)

    @pytest.mark.parametrize("fov", [180.0, 0.0, -10.0, 200.0])
    def test_fov_out_of_range(self, fov):
        with pytest.raises(DomainError):
            intrinsics_from_fov(640, 480, fov)


class TestProjection:
    def test_principal_ray(self, simple_intrinsics, identity_pose):
        p = unproject((32.0, 24.0), 2.0, simple_intrinsics, identity_pose)
        np.testing.assert_allclose(p, [0.0, 0.0, 2.0], atol=1e-12)

    def test_unit_tangent_offset(self, simple_intrinsics, identity_pose):
        # pixel one focal length right of center at depth 1 -> x = 1
        p = unproject((32.0 + 100.0, 24.0), 1.0, simple_intrinsics, identity_pose)
        np.testing.assert_allclose(p, [1.0, 0.0, 1.0], atol=1e-12)

    def test_translation_composes(self, simple_intrinsics, identity_pose):
        shifted = CameraPose(position=np.array([1.0, 2.0, 3.0]),
                             quaternion=np.array([1.0, 0, 0, 0]))
        base = unproject((11.5, 40.25), 1.7, simple_intrinsics, identity_pose)
        moved = unproject((11.5, 40.25), 1.7, simple_intrinsics, shifted)
        np.testing.assert_allclose(moved, base + np.array([1.0, 2.0, 3.0]), atol=1e-12)

    def test_invalid_depth(self, simple_intrinsics, identity_pose):
        for bad in (0.0, -1.0, float("nan"), float("inf")):
            with pytest.raises(InvalidDepth):
                unproject((1.0, 1.0), bad, simple_intrinsics, identity_pose)

    def test_project_center(self, simple_intrinsics, identity_pose):
        (u, v), depth = project([0.0, 0.0, 2.0], simple_intrinsics, identity_pose)
        assert (u, v) == pytest.approx((32.0, 24.0))
        assert depth == pytest.approx(2.0)

    def test_behind_camera(self, simple_intrinsics, identity_pose):
        assert project([0.0, 0.0, -1.0], simple_intrinsics, identity_pose) is None
        assert project([0.0, 0.0, 0.0], simple_intrinsics, identity_pose) is None

    def test_round_trip_random(self, simple_intrinsics, rng):
        for _ in range(50):
            pose = random_pose(rng)
            us = rng.uniform(0, 63, 20)
            vs = rng.uniform(0, 47, 20)
            ds = rng.uniform(0.1, 40.0, 20)
            world = unproject_pixels(us, vs, ds, simple_intrinsics, pose)
            uv, z, front = project_points(world, simple_intrinsics, pose)
            assert front.all()
            np.testing.assert_allclose(uv[:, 0], us, atol=1e-6)
            np.testing.assert_allclose(uv[:, 1], vs, atol=1e-6)
            np.testing.assert_allclose(z, ds, atol=1e-9)


class TestQuaternions:
    def test_matrix_round_trip(self, rng):
        for _ in range(100):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            pose = CameraPose(position=np.zeros(3), quaternion=q)
            back = quat_from_matrix(pose.rotation())
            # q and -q encode the same rotation
            assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-12

    def test_look_at_axes(self):
        pose = look_at_pose([0, 0, 0], [1, 0, 0])
        rot = pose.rotation()
        np.testing.assert_allclose(rot[:, 2], [1, 0, 0], atol=1e-12)  # forward = +x
        np.testing.assert_allclose(rot[:, 1], [0, 0, -1], atol=1e-12)  # image down = -z


class TestErosion:
    def test_full_frame_erodes_to_interior(self):
        mask = np.ones((20, 30), dtype=bool)
        eroded = erode_mask(mask, 2)
        assert eroded.sum() == (30 - 4) * (20 - 4)
        assert eroded[2:-2, 2:-2].all()

    def test_small_mask_exhausted(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[3:7, 3:7] = True  # 4x4
        assert erode_mask(mask, 2).sum() == 0

    def test_monotone_subset(self, rng):
        mask = rng.random((40, 40)) > 0.4
        eroded = erode_mask(mask, 1)
        assert not (eroded & ~mask).any()


class TestMaskToCloud:
    def test_counts_after_erosion(self, simple_intrinsics, identity_pose):
        depth = DepthMap(values=np.full((48, 64), 2.0, dtype=np.float32))
        mask = np.ones((48, 64), dtype=bool)
        cloud = mask_to_cloud(mask, depth, simple_intrinsics, identity_pose, erosion=2)
        assert cloud.shape[0] == (64 - 4) * (48 - 4)

    def test_invalid_depth_dropped(self, simple_intrinsics, identity_pose):
        depth = DepthMap(values=np.zeros((48, 64), dtype=np.float32))
        mask = np.ones((48, 64), dtype=bool)
        assert mask_to_cloud(mask, depth, simple_intrinsics, identity_pose).shape[0] == 0


class TestVoxelDownsample:
    def test_duplicates_collapse(self):
        cloud = np.tile([[0.5, 0.5, 0.5]], (100, 1))
        out = voxel_downsample(cloud, 0.01)
        assert out.shape == (1, 3)
        np.testing.assert_allclose(out[0], [0.5, 0.5, 0.5])

    def test_same_cell_centroid(self):
        out = voxel_downsample(np.array([[0.001, 0, 0], [0.009, 0, 0]]), 0.01)
        assert out.shape == (1, 3)
        np.testing.assert_allclose(out[0], [0.005, 0.0, 0.0], atol=1e-15)

    def test_line_occupancy_matches_brute_force(self):
        xs = np.linspace(0.0, 1.0, 1000)
        cloud = np.stack([xs, np.zeros(1000), np.zeros(1000)], axis=1)
        expected_cells = len({math.floor(x / 0.01) for x in xs})
        out = voxel_downsample(cloud, 0.01)
        assert out.shape[0] == expected_cells
        assert abs(out.shape[0] - 100) <= 1

    def test_output_near_inputs(self, rng):
        cloud = rng.normal(size=(500, 3))
        out = voxel_downsample(cloud, 0.25)
        assert out.shape[0] <= 500
        for p in out:
            assert np.linalg.norm(cloud - p, axis=1).min() <= 0.25 * math.sqrt(3) / 2

    def test_invalid_cell(self):
        with pytest.raises(DomainError):
            voxel_downsample(np.zeros((1, 3)), 0.0)


class TestRotatedBbox:
    def test_unit_cube_corners(self):
        corners = np.array(
            [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float
        )
        box = rotated_bbox(corners)
        np.testing.assert_allclose(np.sort(box.half_extents), [0.5, 0.5, 0.5], atol=1e-9)
        # axes must be a signed permutation of identity
        np.testing.assert_allclose(np.abs(box.axes) @ np.ones(3), np.ones(3), atol=1e-9)

    def test_cylinder_long_axis(self, rng):
        t = rng.uniform(0, 1, 400)
        angle = rng.uniform(0, 2 * math.pi, 400)
        cloud = np.stack(
            [t, 0.05 * np.cos(angle), 0.05 * np.sin(angle)], axis=1
        )
        box = rotated_bbox(cloud)
        assert abs(box.axes[0] @ np.array([1.0, 0, 0])) > 0.99
        assert box.half_extents[0] == pytest.approx(0.5, abs=0.02)

    def test_single_point(self):
        box = rotated_bbox(np.array([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(box.center, [1, 2, 3])
        np.testing.assert_allclose(box.half_extents, 0.0)

    def test_empty_raises(self):
        with pytest.raises(DegenerateCloud):
            rotated_bbox(np.zeros((0, 3)))

    def test_contains_all_points(self, rng):
        for _ in range(20):
            cloud = rng.normal(size=(60, 3)) * rng.uniform(0.1, 3.0, 3)
            box = rotated_bbox(cloud)
            local = np.abs((cloud - box.center) @ box.axes.T)
            assert (local <= box.half_extents + 1e-9).all()

    def test_extents_sorted(self, rng):
        cloud = rng.normal(size=(100, 3)) * np.array([5.0, 1.0, 0.2])
        box = rotated_bbox(cloud)
        assert box.half_extents[0] >= box.half_extents[1] >= box.half_extents[2]


class TestRasterize:
    def test_run_rectangle_roundtrip(self, rng):
        # disjoint per-row run rectangles must rasterize back pixel-exactly
        region = rng.random((30, 40)) > 0.55
        from pipegraph.synth import _region_runs, _runs_to_polygons

        polys = _runs_to_polygons(_region_runs(region), 40, 0.0, None)
        back = rasterize_polygons(polys, 40, 30)
        assert np.array_equal(back, region)

    def test_triangle(self):
        poly = np.array([[5.0, 2.0], [15.0, 2.0], [5.0, 12.0]])
        mask = rasterize_polygons([poly], 20, 15)
        assert mask[3, 6]
        assert not mask[3, 15]
        assert not mask[13, 6]

    def test_empty_and_degenerate(self):
        assert rasterize_polygons([], 10, 10).sum() == 0
        assert rasterize_polygons([np.array([[1.0, 1.0], [2.0, 2.0]])], 10, 10).sum() == 0


def test_write_ply(tmp_path):
    cloud = np.array([[0.0, 1.0, 2.0], [3.5, -1.25, 0.125]])
    path = tmp_path / "cloud.ply"
    write_ply(cloud, path)
    text = path.read_text().splitlines()
    assert text[0] == "ply"
    assert text[2] == "element vertex 2"
    assert text[-1].split() == ["3.500000", "-1.250000", "0.125000"]
