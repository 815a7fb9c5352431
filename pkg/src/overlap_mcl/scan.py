"""Range-image scan representation.

A LiDAR scan is stored as an H x W spherical projection holding per-pixel
range and an optional per-pixel surface normal.  Pixels without a return
carry the sentinel ``INVALID_RANGE``.  All operations here are pure
functions over immutable inputs and are safe to call concurrently.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

INVALID_RANGE = -1.0


@dataclass(frozen=True)
class SensorIntrinsics:
    """Geometry of the spherical projection.

    ``fov_up_deg`` and ``fov_down_deg`` are magnitudes (both positive) of
    the field of view above and below the horizon.  Defaults match a
    64-beam spinning sensor.
    """

    height: int = 64
    width: int = 900
    fov_up_deg: float = 16.6
    fov_down_deg: float = 16.6
    r_min: float = 0.3
    r_max: float = 75.0

    def __post_init__(self):
        if self.height < 2:
            raise ValueError(f"height must be >= 2, got {self.height}")
        if self.width < 4:
            raise ValueError(f"width must be >= 4, got {self.width}")
        if self.fov_up_deg + self.fov_down_deg <= 0.0:
            raise ValueError("total field of view must be positive")
        if not 0.0 <= self.r_min < self.r_max:
            raise ValueError(f"need 0 <= r_min < r_max, got [{self.r_min}, {self.r_max}]")

    @property
    def fov_up_rad(self) -> float:
        return float(np.deg2rad(self.fov_up_deg))

    @property
    def fov_rad(self) -> float:
        return float(np.deg2rad(self.fov_up_deg + self.fov_down_deg))

    @property
    def yaw_per_column_deg(self) -> float:
        return 360.0 / self.width


@dataclass(frozen=True)
class PointCloud:
    """An unordered set of 3-D points (meters). May be empty."""

    points: np.ndarray  # (N, 3) float64

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, pose: np.ndarray) -> "PointCloud":
        """Apply a 4x4 rigid transform to every point."""
        pose = np.asarray(pose, dtype=np.float64)
        return PointCloud(self.points @ pose[:3, :3].T + pose[:3, 3])


@dataclass(frozen=True)
class RangeImage:
    """Spherical-projection scan: per-pixel range plus optional normals.

    ``range`` is (H, W) float32 with INVALID_RANGE marking empty pixels.
    ``normal`` is (H, W, 3) float32 with zero vectors marking pixels
    without a normal, or None when normals were never estimated.
    """

    intrinsics: SensorIntrinsics
    range: np.ndarray
    normal: np.ndarray | None = None

    def __post_init__(self):
        H, W = self.intrinsics.height, self.intrinsics.width
        rng = np.ascontiguousarray(np.asarray(self.range, dtype=np.float32))
        if rng.shape != (H, W):
            raise ValueError(f"range shape {rng.shape} does not match intrinsics ({H}, {W})")
        object.__setattr__(self, "range", rng)
        valid = rng != np.float32(INVALID_RANGE)
        if valid.any():
            vr = rng[valid]
            # small slack: stored ranges are float32-rounded values of in-bound floats
            lo = self.intrinsics.r_min * (1.0 - 1e-6)
            hi = self.intrinsics.r_max * (1.0 + 1e-6)
            if vr.min() < lo or vr.max() > hi:
                raise ValueError("valid ranges fall outside [r_min, r_max]")
        if self.normal is not None:
            nrm = np.ascontiguousarray(np.asarray(self.normal, dtype=np.float32))
            if nrm.shape != (H, W, 3):
                raise ValueError(f"normal shape {nrm.shape} does not match intrinsics")
            object.__setattr__(self, "normal", nrm)
            lengths = np.linalg.norm(nrm, axis=2)
            has_normal = lengths > 0.5
            if np.any(has_normal & ~valid):
                raise ValueError("pixel with invalid range has a normal")
            if has_normal.any() and np.abs(lengths[has_normal] - 1.0).max() > 1e-5:
                raise ValueError("valid normals must be unit length")

    @property
    def valid(self) -> np.ndarray:
        """(H, W) bool mask of pixels holding a return."""
        return self.range != np.float32(INVALID_RANGE)

    @property
    def valid_normal(self) -> np.ndarray:
        if self.normal is None:
            return np.zeros(self.range.shape, dtype=bool)
        return np.linalg.norm(self.normal, axis=2) > 0.5

    def num_valid(self) -> int:
        return int(self.valid.sum())


@functools.lru_cache(maxsize=16)
def ray_directions(intr: SensorIntrinsics) -> np.ndarray:
    """(H, W, 3) float64 unit direction of every pixel's central ray."""
    H, W = intr.height, intr.width
    cols = np.arange(W, dtype=np.float64)
    rows = np.arange(H, dtype=np.float64)
    yaw = np.pi * (1.0 - (2.0 * cols + 1.0) / W)
    pitch = intr.fov_rad * (1.0 - (rows + 0.5) / H) - intr.fov_up_rad
    cos_p = np.cos(pitch)[:, None]
    dirs = np.empty((H, W, 3), dtype=np.float64)
    dirs[:, :, 0] = cos_p * np.cos(yaw)[None, :]
    dirs[:, :, 1] = cos_p * np.sin(yaw)[None, :]
    dirs[:, :, 2] = np.sin(pitch)[:, None]
    dirs.setflags(write=False)
    return dirs


def project_points(points: np.ndarray, intr: SensorIntrinsics):
    """Pixel coordinates of 3-D points under the spherical projection.

    Returns ``(u, v, r, keep)``: integer column/row per point, float64
    range, and the mask of points inside [r_min, r_max].  u/v are floored
    and clamped to the image bounds; entries where ``keep`` is False are
    meaningless.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    keep = (r >= intr.r_min) & (r <= intr.r_max) & (r > 0.0)
    u = np.zeros(len(pts), dtype=np.int64)
    v = np.zeros(len(pts), dtype=np.int64)
    if keep.any():
        kept = pts[keep]
        rk = r[keep]
        yaw = np.arctan2(kept[:, 1], kept[:, 0])
        pitch = np.arcsin(np.clip(kept[:, 2] / rk, -1.0, 1.0))
        uf = 0.5 * (1.0 - yaw / np.pi) * intr.width
        vf = (1.0 - (pitch + intr.fov_up_rad) / intr.fov_rad) * intr.height
        u[keep] = np.clip(np.floor(uf).astype(np.int64), 0, intr.width - 1)
        v[keep] = np.clip(np.floor(vf).astype(np.int64), 0, intr.height - 1)
    return u, v, r, keep


def spherical_project(cloud: PointCloud, intr: SensorIntrinsics) -> RangeImage:
    """Project a point cloud into a range image (z-buffered, no normals).

    Each pixel holds the minimum range among points mapping to it; points
    with range outside [r_min, r_max] are discarded.  An empty cloud yields
    an all-invalid image.
    """
    u, v, r, keep = project_points(cloud.points, intr)
    grid = np.full((intr.height, intr.width), np.inf, dtype=np.float64)
    if keep.any():
        uk, vk, rk = u[keep], v[keep], r[keep]
        order = np.argsort(rk)[::-1]  # write nearest last so it wins
        grid[vk[order], uk[order]] = rk[order]
    out = np.where(np.isfinite(grid), grid, INVALID_RANGE).astype(np.float32)
    return RangeImage(intr, out)


def unproject(img: RangeImage) -> PointCloud:
    """One 3-D point per valid pixel, along the pixel's central ray."""
    dirs = ray_directions(img.intrinsics)
    mask = img.valid
    pts = dirs[mask] * img.range[mask].astype(np.float64)[:, None]
    return PointCloud(pts.reshape(-1, 3))


def vertex_map(img: RangeImage) -> np.ndarray:
    """(H, W, 3) float64 point per pixel; NaN where the pixel is invalid."""
    dirs = ray_directions(img.intrinsics)
    vm = dirs * img.range.astype(np.float64)[:, :, None]
    vm[~img.valid] = np.nan
    return vm


def estimate_normals(img: RangeImage) -> RangeImage:
    """Per-pixel surface normals from right/down neighbor differences.

    The normal is the normalized cross product of the vectors from the
    pixel's 3-D point to its right and down neighbors, flipped to face the
    sensor.  Pixels on the last row/column or lacking a valid neighbor get
    no normal.
    """
    H, W = img.intrinsics.height, img.intrinsics.width
    vm = vertex_map(img)
    valid = img.valid
    normals = np.zeros((H, W, 3), dtype=np.float64)

    ok = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1]
    if ok.any():
        center = vm[:-1, :-1]
        d_right = vm[:-1, 1:] - center
        d_down = vm[1:, :-1] - center
        n = np.cross(d_right, d_down)
        length = np.linalg.norm(n, axis=2)
        ok = ok & (length > 1e-12)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = n / length[:, :, None]
        # orient toward the sensor: n . (-p) >= 0
        flip = np.einsum("ijk,ijk->ij", n, center) > 0.0
        n[flip] = -n[flip]
        region = normals[:-1, :-1]
        region[ok] = n[ok]
    return RangeImage(img.intrinsics, img.range, normals.astype(np.float32))
