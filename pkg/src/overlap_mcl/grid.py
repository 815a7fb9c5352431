"""Virtual-scan grid maps built from an aggregated, pose-registered cloud.

A map is a 2-D lattice of locations at a fixed resolution; each occupied
cell caches the range image a sensor would see standing there facing yaw 0.
Only the range plane is stored per cell (float32); normals are a pure
function of the ranges and are re-estimated on demand, which keeps maps an
order of magnitude smaller.  Grids are immutable once built and safe to
share across threads.

File format (little-endian), magic ``OVMG`` version 1:
header fields, the packed occupancy bitmap, then one float32 H*W range
plane per occupied cell in C order of the (nx, ny) lattice.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .scan import (INVALID_RANGE, PointCloud, RangeImage, SensorIntrinsics,
                   estimate_normals, spherical_project)

_MAGIC = b"OVMG"
_VERSION = 1
DEFAULT_SENSOR_HEIGHT = 1.7
DEFAULT_MIN_VALID_PIXELS = 100


class MapFileError(Exception):
    """Base class for virtual-scan map file problems."""


class InvalidMagicError(MapFileError):
    pass


class UnsupportedVersionError(MapFileError):
    pass


class TruncatedFileError(MapFileError):
    pass


@dataclass(frozen=True)
class AggregatedCloud:
    """Map-frame point cloud, voxel-deduplicated at ``voxel_size``."""

    points: np.ndarray  # (N, 3) float64
    voxel_size: float

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "points", pts)
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")

    def __len__(self):
        return self.points.shape[0]


def voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(np.asarray(points, dtype=np.float64) / voxel).astype(np.int64)


def voxel_downsample(points: np.ndarray, voxel: float, mode: str = "first") -> np.ndarray:
    """Keep one point per voxel.

    ``first`` keeps the earliest point per voxel (input-order dependent);
    ``center`` keeps the point nearest its voxel center, which makes the
    result independent of input order.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy()
    keys = voxel_keys(points, voxel)
    if mode == "first":
        _, first_idx = np.unique(keys, axis=0, return_index=True)
        return points[np.sort(first_idx)]
    if mode == "center":
        centers = (keys + 0.5) * voxel
        dist = np.linalg.norm(points - centers, axis=1)
        # sort by (voxel, distance) and keep the head of each voxel group
        order = np.lexsort((dist, keys[:, 2], keys[:, 1], keys[:, 0]))
        sk = keys[order]
        head = np.ones(len(sk), dtype=bool)
        head[1:] = np.any(sk[1:] != sk[:-1], axis=1)
        return points[order[head]]
    raise ValueError(f"unknown mode {mode!r}")


def aggregate(scans, poses, voxel_size: float = 0.2) -> AggregatedCloud:
    """Register scans into the map frame and deduplicate by voxel.

    ``poses`` are 4x4 map-from-sensor transforms matching ``scans``
    one-to-one; the first point per voxel wins.
    """
    scans = list(scans)
    poses = [np.asarray(p, dtype=np.float64) for p in poses]
    if len(scans) != len(poses):
        raise ValueError(f"{len(scans)} scans but {len(poses)} poses")
    if voxel_size <= 0.0:
        raise ValueError("voxel_size must be positive")
    parts = []
    for cloud, pose in zip(scans, poses):
        if len(cloud):
            parts.append(cloud.points @ pose[:3, :3].T + pose[:3, 3])
    merged = np.concatenate(parts, axis=0) if parts else np.empty((0, 3))
    return AggregatedCloud(voxel_downsample(merged, voxel_size, mode="first"), voxel_size)


def _fov_cull(pts: np.ndarray, intr: SensorIntrinsics) -> np.ndarray:
    """Drop points outside the vertical field of view.

    The projection clamps row indices, so without this cull a point below
    the lowest beam would corrupt the border row of a rendered scan; a real
    sensor simply never sees it.
    """
    r = np.linalg.norm(pts, axis=1)
    safe = np.maximum(r, 1e-300)
    pitch = np.arcsin(np.clip(pts[:, 2] / safe, -1.0, 1.0))
    keep = ((r > 0.0)
            & (pitch >= -np.deg2rad(intr.fov_down_deg))
            & (pitch <= np.deg2rad(intr.fov_up_deg)))
    return pts[keep]


def render_virtual_scan(cloud: AggregatedCloud, x: float, y: float,
                        intrinsics: SensorIntrinsics,
                        sensor_height: float = DEFAULT_SENSOR_HEIGHT,
                        with_normals: bool = True) -> RangeImage:
    """Range image seen from (x, y, sensor_height) facing yaw 0."""
    pts = _fov_cull(cloud.points - np.array([x, y, sensor_height]), intrinsics)
    img = spherical_project(PointCloud(pts), intrinsics)
    return estimate_normals(img) if with_normals else img


class VirtualScanGrid:
    """Lattice of cached virtual scans, all rendered facing yaw 0.

    Cell (ix, iy) covers [origin + i*resolution, origin + (i+1)*resolution)
    on each axis.  ``occupancy`` marks cells whose virtual scan has at least
    ``min_valid_pixels`` returns; only those cells store a range plane.
    """

    def __init__(self, origin, resolution, sensor_height, intrinsics,
                 occupancy, range_planes, min_valid_pixels=DEFAULT_MIN_VALID_PIXELS):
        self.origin = (float(origin[0]), float(origin[1]))
        self.resolution = float(resolution)
        self.sensor_height = float(sensor_height)
        self.intrinsics = intrinsics
        self.occupancy = np.ascontiguousarray(occupancy, dtype=bool)
        self.min_valid_pixels = int(min_valid_pixels)
        nx, ny = self.occupancy.shape
        self.dims = (nx, ny)
        n_occ = int(self.occupancy.sum())
        planes = np.ascontiguousarray(range_planes, dtype=np.float32)
        expected = (n_occ, intrinsics.height, intrinsics.width)
        if planes.shape != expected:
            raise ValueError(f"range planes shape {planes.shape}, expected {expected}")
        self._planes = planes
        self._slot = np.full(self.dims, -1, dtype=np.int64)
        self._slot[self.occupancy] = np.arange(n_occ)

    @property
    def n_occupied(self) -> int:
        return self._planes.shape[0]

    def cell_index(self, x: float, y: float):
        """(ix, iy) of the cell containing the point, or None when off-grid."""
        ix = int(np.floor((x - self.origin[0]) / self.resolution))
        iy = int(np.floor((y - self.origin[1]) / self.resolution))
        if 0 <= ix < self.dims[0] and 0 <= iy < self.dims[1]:
            return ix, iy
        return None

    def cell_center(self, ix: int, iy: int):
        return (self.origin[0] + (ix + 0.5) * self.resolution,
                self.origin[1] + (iy + 0.5) * self.resolution)

    def is_occupied(self, ix: int, iy: int) -> bool:
        return bool(self.occupancy[ix, iy])

    def occupied_cells(self) -> np.ndarray:
        """(M, 2) int array of occupied (ix, iy) pairs."""
        return np.argwhere(self.occupancy)

    def range_plane(self, ix: int, iy: int) -> np.ndarray:
        slot = self._slot[ix, iy]
        if slot < 0:
            raise KeyError(f"cell ({ix}, {iy}) is not occupied")
        return self._planes[slot]

    def scan_at(self, ix: int, iy: int, with_normals: bool = False) -> RangeImage:
        img = RangeImage(self.intrinsics, self.range_plane(ix, iy))
        return estimate_normals(img) if with_normals else img

    def __eq__(self, other):
        if not isinstance(other, VirtualScanGrid):
            return NotImplemented
        return (self.origin == other.origin
                and self.resolution == other.resolution
                and self.sensor_height == other.sensor_height
                and self.intrinsics == other.intrinsics
                and self.dims == other.dims
                and np.array_equal(self.occupancy, other.occupancy)
                and np.array_equal(self._planes, other._planes))


def build_grid(cloud: AggregatedCloud, resolution: float, bounds,
               intrinsics: SensorIntrinsics,
               sensor_height: float = DEFAULT_SENSOR_HEIGHT,
               min_valid_pixels: int = DEFAULT_MIN_VALID_PIXELS,
               neighbor_radius: float | None = None,
               verbose: bool = False) -> VirtualScanGrid:
    """Render a virtual scan for every cell with map points nearby.

    ``bounds`` is (xmin, xmax, ymin, ymax).  Cells without a map point
    within ``neighbor_radius`` (default: the sensor's r_max) are skipped
    outright; rendered cells with fewer than ``min_valid_pixels`` returns
    are marked unoccupied.
    """
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    if len(cloud) == 0:
        raise ValueError("cannot build a grid from an empty cloud")
    if neighbor_radius is None:
        neighbor_radius = intrinsics.r_max
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    nx = max(1, int(np.ceil((xmax - xmin) / resolution - 1e-9)))
    ny = max(1, int(np.ceil((ymax - ymin) / resolution - 1e-9)))

    pts = cloud.points
    inside = ((pts[:, 0] >= xmin - neighbor_radius) & (pts[:, 0] <= xmax + neighbor_radius)
              & (pts[:, 1] >= ymin - neighbor_radius) & (pts[:, 1] <= ymax + neighbor_radius))
    if not inside.any():
        raise ValueError("no map points near the requested bounds")

    # bin points into tiles of r_max so a 3x3 tile block covers any cell's
    # sensing ball; rendering culls to that block
    tile = max(intrinsics.r_max, 1e-6)
    tx = np.floor((pts[:, 0] - xmin) / tile).astype(np.int64)
    ty = np.floor((pts[:, 1] - ymin) / tile).astype(np.int64)
    tiles: dict = {}
    for i, key in enumerate(zip(tx.tolist(), ty.tolist())):
        tiles.setdefault(key, []).append(i)
    tiles = {k: np.asarray(v, dtype=np.int64) for k, v in tiles.items()}

    block_cache: dict = {}

    def tile_block(ctx, cty):
        got = block_cache.get((ctx, cty))
        if got is None:
            parts = [tiles[(ax, ay)] for ax in range(ctx - 1, ctx + 2)
                     for ay in range(cty - 1, cty + 2) if (ax, ay) in tiles]
            got = pts[np.concatenate(parts)] if parts else pts[:0]
            block_cache[(ctx, cty)] = got
        return got

    occupancy = np.zeros((nx, ny), dtype=bool)
    planes = []
    n_attempted = 0
    for ix in range(nx):
        if verbose and ix % max(1, nx // 10) == 0:
            print(f"rendering column {ix + 1}/{nx} ({len(planes)} occupied so far)")
        cx = xmin + (ix + 0.5) * resolution
        ctx = int(np.floor((cx - xmin) / tile))
        for iy in range(ny):
            cy = ymin + (iy + 0.5) * resolution
            cty = int(np.floor((cy - ymin) / tile))
            local = tile_block(ctx, cty)
            if len(local) == 0:
                continue
            d2 = (local[:, 0] - cx) ** 2 + (local[:, 1] - cy) ** 2
            if not (d2 <= neighbor_radius * neighbor_radius).any():
                continue
            n_attempted += 1
            shifted = _fov_cull(local - np.array([cx, cy, sensor_height]), intrinsics)
            img = spherical_project(PointCloud(shifted), intrinsics)
            if img.num_valid() >= min_valid_pixels:
                occupancy[ix, iy] = True
                planes.append(img.range)
    if verbose:
        print(f"grid: {n_attempted} cells attempted, {len(planes)} occupied")

    stack = (np.stack(planes) if planes
             else np.empty((0, intrinsics.height, intrinsics.width), dtype=np.float32))
    return VirtualScanGrid((xmin, ymin), resolution, sensor_height, intrinsics,
                           occupancy, stack, min_valid_pixels)


def count_attempted_cells(cloud: AggregatedCloud, resolution: float, bounds,
                          neighbor_radius: float) -> int:
    """Number of cells build_grid would try to render (no rendering done)."""
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    nx = max(1, int(np.ceil((xmax - xmin) / resolution - 1e-9)))
    ny = max(1, int(np.ceil((ymax - ymin) / resolution - 1e-9)))
    pts = cloud.points
    count = 0
    for ix in range(nx):
        cx = xmin + (ix + 0.5) * resolution
        for iy in range(ny):
            cy = ymin + (iy + 0.5) * resolution
            d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
            if (d2 <= neighbor_radius * neighbor_radius).any():
                count += 1
    return count


_HEADER = struct.Struct("<4sIIIddddddd qq d I")
# magic, version, H, W, fov_up, fov_down, r_min, r_max,
# origin_x, origin_y, resolution, nx, ny, sensor_height, min_valid_pixels


def save_grid(grid: VirtualScanGrid, path) -> None:
    intr = grid.intrinsics
    header = _HEADER.pack(
        _MAGIC, _VERSION, intr.height, intr.width,
        intr.fov_up_deg, intr.fov_down_deg, intr.r_min, intr.r_max,
        grid.origin[0], grid.origin[1], grid.resolution,
        grid.dims[0], grid.dims[1], grid.sensor_height, grid.min_valid_pixels)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.packbits(grid.occupancy.reshape(-1)).tobytes())
        f.write(np.ascontiguousarray(grid._planes, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return data


def load_grid(path) -> VirtualScanGrid:
    with open(path, "rb") as f:
        raw = _read_exact(f, _HEADER.size, "header")
        (magic, version, H, W, fov_up, fov_down, r_min, r_max,
         ox, oy, res, nx, ny, sh, mvp) = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise InvalidMagicError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise UnsupportedVersionError(f"unsupported version {version}")
        intr = SensorIntrinsics(H, W, fov_up, fov_down, r_min, r_max)
        n_cells = nx * ny
        occ_bytes = _read_exact(f, (n_cells + 7) // 8, "occupancy bitmap")
        occupancy = np.unpackbits(np.frombuffer(occ_bytes, dtype=np.uint8),
                                  count=n_cells).astype(bool).reshape(nx, ny)
        n_occ = int(occupancy.sum())
        plane_bytes = _read_exact(f, n_occ * H * W * 4, "range planes")
        if f.read(1):
            raise MapFileError("trailing bytes after range planes")
        planes = np.frombuffer(plane_bytes, dtype="<f4").reshape(n_occ, H, W)
    return VirtualScanGrid((ox, oy), res, sh, intr, occupancy, planes, mvp)
