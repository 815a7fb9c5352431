"""Synthetic urban-block world and LiDAR/odometry simulator.

The world is a flat ground plane at z = 0 plus axis-aligned boxes tagged as
buildings or parked cars.  Scans are produced by exact analytic ray casting
(slab tests), so every reported range satisfies the hit primitive's surface
equation to float64 precision — handy for oracle-free assertions.  Datasets
carry exact ground-truth poses next to seeded noisy odometry.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .angles import wrap_rad
from .scan import PointCloud, RangeImage, SensorIntrinsics, INVALID_RANGE, ray_directions, unproject
from .transforms import pose_matrix, relative_motion
from . import scan_io

# desk-scale sensor used by the bundled demos and evaluation defaults
DESK_INTRINSICS = SensorIntrinsics(height=16, width=180, fov_up_deg=15.0,
                                   fov_down_deg=15.0, r_min=0.5, r_max=25.0)
DEFAULT_SENSOR_HEIGHT = 1.7


@dataclass(frozen=True)
class Box:
    """Axis-aligned box. ``center`` and ``size`` are 3-vectors in meters."""

    center: tuple
    size: tuple
    kind: str = "building"  # "building" or "car"

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must be 3-vectors")
        if min(size) <= 0.0:
            raise ValueError("box extents must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)


@dataclass(frozen=True)
class WorldModel:
    """Ground plane z=0 plus boxes, limited to rectangular bounds."""

    bounds: tuple  # (xmin, xmax, ymin, ymax)
    boxes: tuple

    def __post_init__(self):
        xmin, xmax, ymin, ymax = (float(b) for b in self.bounds)
        if xmin >= xmax or ymin >= ymax:
            raise ValueError("degenerate world bounds")
        object.__setattr__(self, "bounds", (xmin, xmax, ymin, ymax))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for b in self.boxes:
            cx, cy, _ = b.center
            if not (xmin <= cx <= xmax and ymin <= cy <= ymax):
                raise ValueError(f"box center {b.center} outside bounds")

    def contains(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def cars(self):
        return [b for b in self.boxes if b.kind == "car"]

    def buildings(self):
        return [b for b in self.boxes if b.kind == "building"]


@dataclass(frozen=True)
class TrajectorySpec:
    """Waypoint path walked at constant speed, with odometry noise levels."""

    waypoints: np.ndarray        # (K, 2)
    speed: float = 1.0           # meters per step
    odom_sigma_xy: float = 0.0   # additive noise std on dx, dy per step
    odom_sigma_theta: float = 0.0  # additive noise std on dtheta per step
    seed: int = 0

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)
        if wp.shape[0] < 2:
            raise ValueError("need at least two waypoints")
        object.__setattr__(self, "waypoints", wp)
        if self.speed <= 0.0:
            raise ValueError("speed must be positive")


def _box_arrays(world: WorldModel):
    if not world.boxes:
        return None, None
    centers = np.array([b.center for b in world.boxes], dtype=np.float64)
    half = np.array([b.size for b in world.boxes], dtype=np.float64) / 2.0
    return centers - half, centers + half


def simulate_scan(world: WorldModel, pose, intr: SensorIntrinsics,
                  sensor_height: float = DEFAULT_SENSOR_HEIGHT) -> RangeImage:
    """Exact ray-cast scan from a planar pose (x, y, theta) inside the world.

    Per pixel, the nearest positive hit against the ground plane and all
    boxes within [r_min, r_max]; pixels without a hit are invalid.  No
    normals are estimated here.
    """
    x, y, theta = (float(p) for p in pose)
    if not world.contains(x, y):
        raise ValueError(f"pose ({x}, {y}) outside world bounds")
    H, W = intr.height, intr.width
    dirs = ray_directions(intr).reshape(-1, 3)
    c, s = np.cos(theta), np.sin(theta)
    d = np.empty_like(dirs)
    d[:, 0] = c * dirs[:, 0] - s * dirs[:, 1]
    d[:, 1] = s * dirs[:, 0] + c * dirs[:, 1]
    d[:, 2] = dirs[:, 2]
    origin = np.array([x, y, sensor_height], dtype=np.float64)

    t_best = np.full(len(d), np.inf)

    # ground plane z = 0
    dz = d[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = -origin[2] / dz
    hit = (dz < 0.0) & (t_ground > 0.0)
    t_best[hit] = t_ground[hit]

    lo, hi = _box_arrays(world)
    if lo is not None:
        inv = np.empty_like(d)
        with np.errstate(divide="ignore"):
            np.divide(1.0, d, out=inv)
        for bi in range(len(lo)):
            t1 = (lo[bi] - origin) * inv  # (M, 3)
            t2 = (hi[bi] - origin) * inv
            tmin = np.minimum(t1, t2).max(axis=1)
            tmax = np.maximum(t1, t2).min(axis=1)
            ok = (tmax >= tmin) & (tmax > 0.0)
            t_hit = np.where(tmin > 0.0, tmin, tmax)
            closer = ok & (t_hit < t_best)
            t_best[closer] = t_hit[closer]

    r = t_best  # directions are unit length
    valid = np.isfinite(r) & (r >= intr.r_min) & (r <= intr.r_max)
    out = np.where(valid, r, INVALID_RANGE).astype(np.float32).reshape(H, W)
    return RangeImage(intr, out)


def trajectory_poses(spec: TrajectorySpec) -> np.ndarray:
    """(T, 3) poses along the waypoint polyline at ``speed`` meters/step.

    Heading follows the current segment direction; the final waypoint is
    always included.
    """
    wp = spec.waypoints
    seg = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len <= 0.0):
        raise ValueError("consecutive duplicate waypoints")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    stations = np.arange(0.0, total, spec.speed)
    stations = np.append(stations, total)
    idx = np.clip(np.searchsorted(cum, stations, side="right") - 1, 0, len(seg) - 1)
    frac = (stations - cum[idx]) / seg_len[idx]
    xy = wp[idx] + seg[idx] * frac[:, None]
    theta = np.arctan2(seg[idx, 1], seg[idx, 0])
    return np.column_stack([xy, theta])


@dataclass
class Dataset:
    """Simulated drive: scans plus exact poses and noisy odometry."""

    poses: np.ndarray       # (T, 3) ground truth (x, y, theta)
    odometry: np.ndarray    # (T, 3) noisy relative motions; row 0 is zeros
    images: list            # RangeImage per step
    clouds: list            # PointCloud per step (sensor frame)
    sensor_height: float

    def __len__(self):
        return len(self.poses)


def generate_dataset(world: WorldModel, traj: TrajectorySpec, intr: SensorIntrinsics,
                     sensor_height: float = DEFAULT_SENSOR_HEIGHT, out_dir=None) -> Dataset:
    """Simulate a drive through ``world`` along ``traj``.

    Odometry is the exact relative motion between consecutive poses plus
    seeded Gaussian noise.  When ``out_dir`` is given, scans, poses, and
    odometry are also written in the package file formats.
    """
    poses = trajectory_poses(traj)
    xmin, xmax, ymin, ymax = world.bounds
    for px, py, _ in poses:
        if not world.contains(px, py):
            raise ValueError(f"trajectory leaves world bounds at ({px:.1f}, {py:.1f})")

    rng = np.random.default_rng(traj.seed)
    images, clouds = [], []
    for pose in poses:
        img = simulate_scan(world, pose, intr, sensor_height)
        images.append(img)
        clouds.append(unproject(img))

    T = len(poses)
    odom = np.zeros((T, 3), dtype=np.float64)
    for t in range(1, T):
        odom[t] = relative_motion(poses[t - 1], poses[t])
    noise = np.zeros_like(odom)
    if T > 1:
        noise[1:, 0] = rng.normal(0.0, traj.odom_sigma_xy, T - 1)
        noise[1:, 1] = rng.normal(0.0, traj.odom_sigma_xy, T - 1)
        noise[1:, 2] = rng.normal(0.0, traj.odom_sigma_theta, T - 1)
    odom = odom + noise

    ds = Dataset(poses, odom, images, clouds, sensor_height)
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


def save_dataset(ds: Dataset, out_dir) -> None:
    scan_dir = os.path.join(out_dir, "scans")
    os.makedirs(scan_dir, exist_ok=True)
    for t, cloud in enumerate(ds.clouds):
        scan_io.save_point_cloud(cloud, os.path.join(scan_dir, f"{t:06d}.bin"))
    mats = np.stack([pose_matrix(x, y, th, ds.sensor_height) for x, y, th in ds.poses])
    scan_io.save_poses(mats, os.path.join(out_dir, "poses.txt"))
    scan_io.save_odometry(ds.odometry, os.path.join(out_dir, "odometry.txt"))


def perturb_world(world: WorldModel, seed: int, fraction: float = 0.2) -> WorldModel:
    """Change a fraction of the parked cars, keeping buildings fixed.

    Each selected car is removed, nudged a few meters, or relocated to a
    random spot inside the bounds — so at fraction 1.0 no car keeps its
    original center.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    cars = world.cars()
    keep = list(world.buildings())
    n_sel = int(round(fraction * len(cars)))
    selected = set(rng.choice(len(cars), size=n_sel, replace=False).tolist()) if n_sel else set()
    xmin, xmax, ymin, ymax = world.bounds
    for i, car in enumerate(cars):
        if i not in selected:
            keep.append(car)
            continue
        action = int(rng.integers(3))
        if action == 0:
            continue  # removed
        if action == 1:  # nudged nearby, never exactly in place
            shift = rng.normal(0.0, 3.0, 2)
            shift += np.where(shift >= 0, 0.5, -0.5)
            cx = float(np.clip(car.center[0] + shift[0], xmin + 3, xmax - 3))
            cy = float(np.clip(car.center[1] + shift[1], ymin + 3, ymax - 3))
        else:  # relocated
            cx = float(rng.uniform(xmin + 5, xmax - 5))
            cy = float(rng.uniform(ymin + 5, ymax - 5))
        keep.append(Box((cx, cy, car.center[2]), car.size, "car"))
    return WorldModel(world.bounds, tuple(keep))


def save_world(world: WorldModel, path) -> None:
    doc = {
        "bounds": list(world.bounds),
        "boxes": [{"center": list(b.center), "size": list(b.size), "kind": b.kind}
                  for b in world.boxes],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_world(path) -> WorldModel:
    with open(path) as f:
        doc = json.load(f)
    boxes = tuple(Box(tuple(b["center"]), tuple(b["size"]), b["kind"]) for b in doc["boxes"])
    return WorldModel(tuple(doc["bounds"]), boxes)


# ---------------------------------------------------------------------------
# default desk-scale world: 200 m x 200 m, a 3x3 road lattice with two drive
# loops, seeded irregular buildings in the blocks, cars parked along roads

_ROAD_LINES = (-50.0, 0.0, 50.0)
_ROAD_HALF_WIDTH = 5.0
_WORLD_BOUNDS = (-100.0, 100.0, -100.0, 100.0)


def _in_road(x, y, margin=0.0):
    r = _ROAD_HALF_WIDTH + margin
    return any(abs(x - line) < r for line in _ROAD_LINES) or \
        any(abs(y - line) < r for line in _ROAD_LINES)


def make_world(seed: int = 0, n_buildings: int = 40, n_cars: int = 30) -> WorldModel:
    """Seeded random desk world on the fixed road lattice."""
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = _WORLD_BOUNDS
    boxes = []
    tries = 0
    while len(boxes) < n_buildings and tries < n_buildings * 200:
        tries += 1
        sx = rng.uniform(8.0, 26.0)
        sy = rng.uniform(8.0, 26.0)
        h = rng.uniform(5.0, 16.0)
        cx = rng.uniform(xmin + sx / 2 + 1, xmax - sx / 2 - 1)
        cy = rng.uniform(ymin + sy / 2 + 1, ymax - sy / 2 - 1)
        # keep the footprint clear of the road corridor
        corners = [(cx - sx / 2, cy - sy / 2), (cx + sx / 2, cy - sy / 2),
                   (cx - sx / 2, cy + sy / 2), (cx + sx / 2, cy + sy / 2)]
        if any(_in_road(px, py, margin=1.5) for px, py in corners) or _in_road(cx, cy, 1.5):
            continue
        clash = False
        for b in boxes:
            if abs(b.center[0] - cx) < (b.size[0] + sx) / 2 + 1.0 and \
               abs(b.center[1] - cy) < (b.size[1] + sy) / 2 + 1.0:
                clash = True
                break
        if clash:
            continue
        boxes.append(Box((cx, cy, h / 2), (sx, sy, h), "building"))

    cars = 0
    tries = 0
    while cars < n_cars and tries < n_cars * 200:
        tries += 1
        line = float(rng.choice(_ROAD_LINES))
        along = rng.uniform(-70.0, 70.0)
        side = float(rng.choice([-1.0, 1.0]))
        offset = line + side * (_ROAD_HALF_WIDTH - 1.2)
        if rng.random() < 0.5:
            cx, cy, size = along, offset, (4.6, 2.0, 1.7)  # east-west road
        else:
            cx, cy, size = offset, along, (2.0, 4.6, 1.7)  # north-south road
        # keep junctions clear: the drive path cuts corners there
        if any(abs(cx - lx) < 9 and abs(cy - ly) < 9
               for lx in _ROAD_LINES for ly in _ROAD_LINES):
            continue
        if any(abs(b.center[0] - cx) < (b.size[0] + size[0]) / 2 + 0.5 and
               abs(b.center[1] - cy) < (b.size[1] + size[1]) / 2 + 0.5 for b in boxes):
            continue
        boxes.append(Box((cx, cy, size[2] / 2), size, "car"))
        cars += 1
    return WorldModel(_WORLD_BOUNDS, tuple(boxes))


def default_trajectory(seed: int = 0, speed: float = 1.25,
                       odom_sigma_xy: float = 0.02,
                       odom_sigma_theta: float = 0.004) -> TrajectorySpec:
    """Two road loops around adjacent blocks, corners chamfered at 45 degrees.

    Counter-clockwise around the block south-west of the central junction,
    then counter-clockwise around the block north-east of it.
    """
    waypoints = [
        (-44, -50), (-6, -50), (0, -44),          # east on y=-50, turn north
        (0, -6), (-6, 0),                          # north on x=0, turn west
        (-44, 0), (-50, -6),                       # west on y=0, turn south
        (-50, -44), (-44, -50),                    # south on x=-50, close loop A
        (-6, -50), (0, -44),                       # east again, turn north
        (0, -6), (6, 0),                           # north, now turn east
        (44, 0), (50, 6),                          # east on y=0, turn north
        (50, 44), (44, 50),                        # north on x=50, turn west
        (6, 50), (0, 44),                          # west on y=50, turn south
        (0, 6), (0, 0),                            # south on x=0, end at junction
    ]
    return TrajectorySpec(np.asarray(waypoints, dtype=float), speed=speed,
                          odom_sigma_xy=odom_sigma_xy,
                          odom_sigma_theta=odom_sigma_theta, seed=seed)
