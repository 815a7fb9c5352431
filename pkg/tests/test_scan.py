import math

import numpy as np
import pytest

from overlap_mcl.scan import (INVALID_RANGE, PointCloud, RangeImage,
                              SensorIntrinsics, estimate_normals,
                              ray_directions, spherical_project, unproject)
from overlap_mcl import scan_io

from conftest import random_shell_cloud


def project_oracle(points, intr):
    """Exhaustive per-point z-buffer projection, independent of the library."""
    H, W = intr.height, intr.width
    fov_up = math.radians(intr.fov_up_deg)
    fov = math.radians(intr.fov_up_deg + intr.fov_down_deg)
    best = {}
    for p in np.asarray(points, dtype=np.float64):
        r = math.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        if r < intr.r_min or r > intr.r_max or r == 0.0:
            continue
        yaw = math.atan2(p[1], p[0])
        pitch = math.asin(min(max(p[2] / r, -1.0), 1.0))
        u = math.floor(0.5 * (1.0 - yaw / math.pi) * W)
        v = math.floor((1.0 - (pitch + fov_up) / fov) * H)
        u = min(max(u, 0), W - 1)
        v = min(max(v, 0), H - 1)
        if (v, u) not in best or r < best[(v, u)]:
            best[(v, u)] = r
    img = np.full((H, W), INVALID_RANGE, dtype=np.float64)
    for (v, u), r in best.items():
        img[v, u] = r
    return img.astype(np.float32)


def analytic_plane_image(intr, plane_axis, offset):
    """Image of an infinite plane <axis> = offset seen from the origin."""
    dirs = ray_directions(intr)
    d = dirs[:, :, plane_axis]
    with np.errstate(divide="ignore"):
        t = offset / d
    valid = (t > 0) & (t >= intr.r_min) & (t <= intr.r_max)
    rng = np.where(valid, t, INVALID_RANGE).astype(np.float32)
    return RangeImage(intr, rng)


class TestIntrinsics:
    def test_defaults_valid(self):
        intr = SensorIntrinsics()
        assert intr.height == 64 and intr.width == 900

    @pytest.mark.parametrize("kwargs", [
        dict(height=1), dict(width=3), dict(fov_up_deg=0.0, fov_down_deg=0.0),
        dict(r_min=-1.0), dict(r_min=10.0, r_max=5.0),
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SensorIntrinsics(**kwargs)


class TestSphericalProject:
    def test_forward_point_lands_center(self, small_intr):
        img = spherical_project(PointCloud(np.array([[10.0, 0.0, 0.0]])), small_intr)
        v, u = np.argwhere(img.valid)[0]
        assert u == small_intr.width // 2
        assert v == small_intr.height // 2
        assert img.range[v, u] == np.float32(10.0)

    def test_empty_cloud(self, small_intr):
        img = spherical_project(PointCloud(np.empty((0, 3))), small_intr)
        assert img.num_valid() == 0

    def test_out_of_range_points_discarded(self, small_intr):
        pts = np.array([[0.1, 0.0, 0.0], [100.0, 0.0, 0.0]])
        img = spherical_project(PointCloud(pts), small_intr)
        assert img.num_valid() == 0

    def test_matches_exhaustive_oracle(self, small_intr):
        rng = np.random.default_rng(7)
        for _ in range(5):
            pts = random_shell_cloud(rng, 2000, r_lo=1.0, r_hi=40.0)
            img = spherical_project(PointCloud(pts), small_intr)
            assert np.array_equal(img.range, project_oracle(pts, small_intr))

    def test_zbuffer_keeps_minimum(self, small_intr):
        rng = np.random.default_rng(11)
        pts = random_shell_cloud(rng, 3000, r_lo=2.0, r_hi=25.0)
        img = spherical_project(PointCloud(pts), small_intr)
        from overlap_mcl.scan import project_points
        u, v, r, keep = project_points(pts, small_intr)
        for ui, vi, ri in zip(u[keep], v[keep], r[keep]):
            assert img.range[vi, ui] <= np.float32(ri) * (1 + 1e-7)

    def test_permutation_invariant(self, small_intr):
        rng = np.random.default_rng(13)
        pts = random_shell_cloud(rng, 1000)
        a = spherical_project(PointCloud(pts), small_intr)
        b = spherical_project(PointCloud(pts[rng.permutation(len(pts))]), small_intr)
        assert np.array_equal(a.range, b.range)


class TestNormals:
    def test_flat_ground_normals_point_up(self, small_intr):
        img = analytic_plane_image(small_intr, plane_axis=2, offset=-1.5)
        assert img.num_valid() > 50
        out = estimate_normals(img)
        n = out.normal[out.valid_normal]
        assert len(n) > 0
        assert np.abs(n - np.array([0.0, 0.0, 1.0])).max() < 1e-3

    def test_wall_normals_face_sensor(self, small_intr):
        img = analytic_plane_image(small_intr, plane_axis=0, offset=20.0)
        out = estimate_normals(img)
        n = out.normal[out.valid_normal]
        assert len(n) > 0
        assert np.abs(n - np.array([-1.0, 0.0, 0.0])).max() < 1e-3

    def test_single_pixel_gets_no_normal(self, small_intr):
        img = spherical_project(PointCloud(np.array([[10.0, 0.0, 0.0]])), small_intr)
        out = estimate_normals(img)
        assert out.valid_normal.sum() == 0

    def test_normals_unit_and_oriented(self, small_intr):
        rng = np.random.default_rng(5)
        pts = random_shell_cloud(rng, 5000, r_lo=3.0, r_hi=25.0)
        out = estimate_normals(spherical_project(PointCloud(pts), small_intr))
        mask = out.valid_normal
        if mask.any():
            n = out.normal[mask].astype(np.float64)
            assert np.abs(np.linalg.norm(n, axis=1) - 1.0).max() < 1e-5
            rays = ray_directions(small_intr)[mask]
            assert (np.einsum("ij,ij->i", n, -rays) >= -1e-7).all()

    def test_invalid_pixels_have_no_normal(self, small_intr):
        img = analytic_plane_image(small_intr, plane_axis=2, offset=-1.5)
        out = estimate_normals(img)
        assert not np.any(out.valid_normal & ~out.valid)


class TestUnproject:
    def test_all_invalid_gives_empty(self, small_intr):
        img = RangeImage(small_intr, np.full(
            (small_intr.height, small_intr.width), INVALID_RANGE, np.float32))
        assert len(unproject(img)) == 0

    def test_single_pixel_inverse(self, small_intr):
        img = spherical_project(PointCloud(np.array([[10.0, 0.0, 0.0]])), small_intr)
        pts = unproject(img).points
        assert pts.shape == (1, 3)
        # within one pixel's ray quantization of the original point
        quantum = 10.0 * 2 * np.pi / small_intr.width
        assert np.linalg.norm(pts[0] - [10.0, 0.0, 0.0]) < quantum

    def test_roundtrip_preserves_ranges(self, small_intr):
        rng = np.random.default_rng(3)
        pts = random_shell_cloud(rng, 4000, r_lo=1.0, r_hi=29.0)
        img = spherical_project(PointCloud(pts), small_intr)
        back = spherical_project(unproject(img), small_intr)
        both = img.valid & back.valid
        assert both.sum() == img.num_valid()
        diff = np.abs(img.range[both].astype(np.float64)
                      - back.range[both].astype(np.float64))
        assert diff.max() <= 1e-6


class TestFileFormats:
    def test_point_cloud_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        cloud = PointCloud(rng.normal(size=(257, 3)) * 10)
        path = tmp_path / "scan.bin"
        scan_io.save_point_cloud(cloud, path)
        back = scan_io.load_point_cloud(path)
        assert np.allclose(back.points, cloud.points, atol=1e-5)
        assert path.stat().st_size == 257 * 4 * 4

    def test_point_cloud_bad_size(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 10)
        with pytest.raises(ValueError):
            scan_io.load_point_cloud(path)

    def test_pose_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        from overlap_mcl.transforms import pose_matrix
        poses = np.stack([pose_matrix(*rng.uniform(-5, 5, 3), z=1.7) for _ in range(9)])
        path = tmp_path / "poses.txt"
        scan_io.save_poses(poses, path)
        back = scan_io.load_poses(path)
        assert np.array_equal(back, poses)

    def test_odometry_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        odom = rng.normal(size=(31, 3))
        path = tmp_path / "odom.txt"
        scan_io.save_odometry(odom, path)
        assert np.array_equal(scan_io.load_odometry(path), odom)


class TestRangeImageInvariants:
    def test_rejects_out_of_bound_ranges(self, small_intr):
        bad = np.full((small_intr.height, small_intr.width), 1000.0, np.float32)
        with pytest.raises(ValueError):
            RangeImage(small_intr, bad)

    def test_rejects_normal_on_invalid_pixel(self, small_intr):
        rngs = np.full((small_intr.height, small_intr.width), INVALID_RANGE, np.float32)
        normals = np.zeros((small_intr.height, small_intr.width, 3), np.float32)
        normals[0, 0] = (0, 0, 1)
        with pytest.raises(ValueError):
            RangeImage(small_intr, rngs, normals)
