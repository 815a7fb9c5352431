import math

import numpy as np
import pytest

from overlap_mcl.angles import wrap_deg
from overlap_mcl.overlap import (GeometricScorer, OverlapEstimate,
                                 _match_counts_numpy, estimate,
                                 ground_truth_overlap, match_counts_all_shifts,
                                 shift_score)
from overlap_mcl.scan import (INVALID_RANGE, PointCloud, RangeImage,
                              SensorIntrinsics, ray_directions,
                              spherical_project)
from overlap_mcl import sim
from overlap_mcl.transforms import invert, pose_matrix

from conftest import random_shell_cloud


def roll_image(img, k):
    """Circularly shift an image's columns by k (content moves right)."""
    return RangeImage(img.intrinsics, np.roll(img.range, k, axis=1))


def random_image(rng, intr, fill=0.7):
    """Random ranges with a random validity mask."""
    H, W = intr.height, intr.width
    ranges = rng.uniform(intr.r_min, intr.r_max, (H, W)).astype(np.float32)
    ranges[rng.random((H, W)) > fill] = INVALID_RANGE
    return RangeImage(intr, ranges)


def shift_score_oracle(query, map_scan, k, eps_r):
    """Naive double loop over pixels."""
    H, W = query.intrinsics.height, query.intrinsics.width
    qv, mv = query.valid, map_scan.valid
    q = query.range.astype(np.float64)
    m = map_scan.range.astype(np.float64)
    n_valid = int(qv.sum())
    if n_valid == 0:
        return 0.0
    hits = 0
    for i in range(H):
        for j in range(W):
            jq = (j + k) % W
            if qv[i, jq] and mv[i, j] and abs(q[i, jq] - m[i, j]) <= eps_r:
                hits += 1
    return hits / n_valid


def gt_overlap_oracle(a, b, rel_pose, eps_r):
    """Per-pixel reprojection loop."""
    intr_b = b.intrinsics
    fov_up = math.radians(intr_b.fov_up_deg)
    fov = math.radians(intr_b.fov_up_deg + intr_b.fov_down_deg)
    dirs = ray_directions(a.intrinsics)
    R, t = rel_pose[:3, :3], rel_pose[:3, 3]
    n_valid = 0
    hits = 0
    for i in range(a.intrinsics.height):
        for j in range(a.intrinsics.width):
            if not a.valid[i, j]:
                continue
            n_valid += 1
            p = R @ (dirs[i, j] * float(a.range[i, j])) + t
            r = math.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2)
            if r < intr_b.r_min or r > intr_b.r_max or r == 0.0:
                continue
            yaw = math.atan2(p[1], p[0])
            pitch = math.asin(min(max(p[2] / r, -1.0), 1.0))
            u = min(max(math.floor(0.5 * (1 - yaw / math.pi) * intr_b.width), 0),
                    intr_b.width - 1)
            v = min(max(math.floor((1 - (pitch + fov_up) / fov) * intr_b.height), 0),
                    intr_b.height - 1)
            if b.valid[v, u] and abs(r - float(b.range[v, u])) <= eps_r:
                hits += 1
    return hits / n_valid if n_valid else 0.0


@pytest.fixture(scope="module")
def box_scans(world, desk_intr):
    """Two simulated scans two meters apart plus their poses."""
    pose_a = (-44.0, -50.0, 0.3)
    pose_b = (-42.0, -50.0, 0.3)
    a = sim.simulate_scan(world, pose_a, desk_intr)
    b = sim.simulate_scan(world, pose_b, desk_intr)
    return a, b, pose_a, pose_b


class TestGroundTruthOverlap:
    def test_identity_is_one(self, box_scans):
        a = box_scans[0]
        assert ground_truth_overlap(a, a, np.eye(4), 1.0) == 1.0

    def test_identity_tiny_epsilon(self, box_scans):
        a = box_scans[0]
        assert ground_truth_overlap(a, a, np.eye(4), 1e-9) == 1.0

    def test_translated_outside_range_is_zero(self, box_scans, desk_intr):
        a = box_scans[0]
        far = np.eye(4)
        far[0, 3] = 10 * desk_intr.r_max
        assert ground_truth_overlap(a, a, far, 1.0) == 0.0

    def test_matches_reprojection_oracle(self, box_scans):
        a, b, pose_a, pose_b = box_scans
        h = sim.DEFAULT_SENSOR_HEIGHT
        rel = invert(pose_matrix(*pose_b, z=h)) @ pose_matrix(*pose_a, z=h)
        got = ground_truth_overlap(a, b, rel, 1.0)
        want = gt_overlap_oracle(a, b, rel, 1.0)
        assert got == pytest.approx(want, abs=1e-12)
        assert 0.3 < got < 1.0

    def test_monotone_in_epsilon(self, box_scans):
        a, b, pose_a, pose_b = box_scans
        h = sim.DEFAULT_SENSOR_HEIGHT
        rel = invert(pose_matrix(*pose_b, z=h)) @ pose_matrix(*pose_a, z=h)
        values = [ground_truth_overlap(a, b, rel, e) for e in (0.1, 0.3, 1.0, 3.0)]
        assert all(x <= y + 1e-12 for x, y in zip(values, values[1:]))

    def test_no_valid_pixels_gives_zero(self, desk_intr):
        empty = RangeImage(desk_intr, np.full(
            (desk_intr.height, desk_intr.width), INVALID_RANGE, np.float32))
        assert ground_truth_overlap(empty, empty, np.eye(4)) == 0.0


class TestShiftScore:
    def test_zero_shift_identity(self, box_scans):
        a = box_scans[0]
        assert shift_score(a, a, 0, 1.0) == 1.0

    def test_inverse_shift_recovers(self, box_scans):
        a = box_scans[0]
        assert shift_score(roll_image(a, 37), a, 37, 1.0) == 1.0

    def test_matches_double_loop_oracle(self, small_intr):
        rng = np.random.default_rng(21)
        q = random_image(rng, small_intr)
        m = random_image(rng, small_intr)
        for k in (0, 1, 17, small_intr.width - 1):
            assert shift_score(q, m, k, 1.0) == pytest.approx(
                shift_score_oracle(q, m, k, 1.0), abs=1e-12)

    def test_symmetry_under_identical_masks(self, small_intr):
        rng = np.random.default_rng(22)
        W = small_intr.width
        q = random_image(rng, small_intr, fill=1.1)  # fully valid
        m = random_image(rng, small_intr, fill=1.1)
        for k in (0, 5, 23, W - 2):
            assert shift_score(q, m, k, 2.0) == pytest.approx(
                shift_score(m, q, (W - k) % W, 2.0), abs=1e-12)

    def test_intrinsics_mismatch_rejected(self, small_intr, desk_intr):
        rng = np.random.default_rng(23)
        with pytest.raises(ValueError):
            shift_score(random_image(rng, small_intr),
                        random_image(rng, desk_intr), 0)

    def test_kernel_paths_agree(self, small_intr):
        rng = np.random.default_rng(24)
        for _ in range(3):
            q = random_image(rng, small_intr)
            m = random_image(rng, small_intr)
            from overlap_mcl.overlap import _GUARD_QUERY, _GUARD_REF, _guarded
            qg, mg = _guarded(q, _GUARD_QUERY), _guarded(m, _GUARD_REF)
            fast = match_counts_all_shifts(qg, mg, 1.0)
            slow = _match_counts_numpy(qg, mg, 1.0)
            assert np.array_equal(fast, slow)

    def test_kernel_matches_single_shift(self, small_intr):
        rng = np.random.default_rng(25)
        q = random_image(rng, small_intr)
        m = random_image(rng, small_intr)
        from overlap_mcl.overlap import _GUARD_QUERY, _GUARD_REF, _guarded
        counts = match_counts_all_shifts(_guarded(q, _GUARD_QUERY),
                                         _guarded(m, _GUARD_REF), 1.0)
        n_valid = q.num_valid()
        for k in (0, 3, 31, 59):
            assert counts[k] / n_valid == pytest.approx(shift_score(q, m, k, 1.0))


class TestEstimate:
    def test_identical_scans(self, box_scans):
        est = estimate(box_scans[0], box_scans[0])
        assert est == OverlapEstimate(1.0, 0.0)

    def test_column_rotation_recovers_shift(self, box_scans, desk_intr):
        a = box_scans[0]
        W = desk_intr.width
        for k in (1, 37, W // 2, W - 5):
            est = estimate(roll_image(a, k), a)
            assert est.overlap == 1.0
            assert est.yaw_offset_deg == pytest.approx(wrap_deg(k * 360.0 / W))

    def test_resimulated_rotation_recovers_yaw(self, world, desk_intr):
        # query rotated counter-clockwise by 40 degrees: positive yaw offset
        pose = (-44.0, -50.0, 0.2)
        base = sim.simulate_scan(world, pose, desk_intr)
        rotated = sim.simulate_scan(world, (pose[0], pose[1], pose[2] + np.deg2rad(40)),
                                    desk_intr)
        est = estimate(rotated, base)
        assert est.overlap >= 0.95
        assert abs(est.yaw_offset_deg - 40.0) <= 360.0 / desk_intr.width

    def test_disjoint_scenes_low_overlap(self, desk_intr):
        rng = np.random.default_rng(31)
        scene_a = sim.WorldModel((-100, 100, -100, 100), tuple(
            sim.Box((float(x), float(y), 2.0), (4.0, 6.0, 4.0))
            for x, y in rng.uniform(-20, 20, (12, 2))))
        scene_b = sim.WorldModel((-100, 100, -100, 100), tuple(
            sim.Box((float(x), float(y), 1.5), (8.0, 3.0, 3.0))
            for x, y in rng.uniform(-25, 25, (9, 2))))
        a = sim.simulate_scan(scene_a, (0, 0, 0.0), desk_intr, sensor_height=1.2)
        b = sim.simulate_scan(scene_b, (5, 3, 1.0), desk_intr, sensor_height=2.2)
        est = estimate(a, b)
        # regression baseline: distinct scenes must not look alike
        assert est.overlap < 0.3

    def test_overlap_invariant_to_query_rotation(self, box_scans):
        a, b = box_scans[0], box_scans[1]
        base = estimate(a, b)
        W = a.intrinsics.width
        for k in (11, 87):
            rolled = estimate(roll_image(a, k), b)
            assert rolled.overlap == base.overlap
            assert wrap_deg(rolled.yaw_offset_deg - base.yaw_offset_deg) == \
                pytest.approx(wrap_deg(k * 360.0 / W))

    def test_intrinsics_mismatch_rejected(self, small_intr, desk_intr):
        rng = np.random.default_rng(33)
        with pytest.raises(ValueError):
            estimate(random_image(rng, small_intr), random_image(rng, desk_intr))

    def test_empty_query(self, desk_intr, box_scans):
        empty = RangeImage(desk_intr, np.full(
            (desk_intr.height, desk_intr.width), INVALID_RANGE, np.float32))
        assert estimate(empty, box_scans[0]) == OverlapEstimate(0.0, 0.0)

    def test_yaw_convention_against_ground_truth(self, world, desk_intr):
        # one-time convention check: the shift-based yaw equals the known
        # relative rotation that ground_truth_overlap confirms as aligned
        pose = (-44.0, -50.0, 0.0)
        dtheta = np.deg2rad(24.0)
        base = sim.simulate_scan(world, pose, desk_intr)
        rotated = sim.simulate_scan(world, (pose[0], pose[1], dtheta), desk_intr)
        h = sim.DEFAULT_SENSOR_HEIGHT
        rel = invert(pose_matrix(*pose, z=h)) @ pose_matrix(pose[0], pose[1], dtheta, z=h)
        assert ground_truth_overlap(rotated, base, rel, 1.0) > 0.97
        est = estimate(rotated, base)
        assert est.yaw_offset_deg == pytest.approx(24.0, abs=360.0 / desk_intr.width)
