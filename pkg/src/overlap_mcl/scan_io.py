"""File formats for scans, poses, and odometry.

Point-cloud files are little-endian binary float32 quadruples
(x, y, z, intensity); intensity is read and ignored.  Pose files are plain
text with one scan per line: 12 whitespace-separated floats forming the
row-major 3x4 rigid transform mapping sensor coordinates into the map
frame.  Odometry files hold one relative 2-D motion per scan:
``dx dy dtheta`` (meters, meters, radians) in the previous sensor frame.
"""

from __future__ import annotations

import os

import numpy as np

from .scan import PointCloud


def load_point_cloud(path) -> PointCloud:
    data = np.fromfile(path, dtype="<f4")
    if data.size % 4 != 0:
        raise ValueError(f"{path}: size is not a multiple of float32 quadruples")
    return PointCloud(data.reshape(-1, 4)[:, :3].astype(np.float64))


def save_point_cloud(cloud: PointCloud, path) -> None:
    out = np.zeros((len(cloud), 4), dtype="<f4")
    out[:, :3] = cloud.points
    out.tofile(path)


def load_poses(path) -> np.ndarray:
    """(T, 4, 4) float64 map-from-sensor transforms."""
    rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if rows.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 floats per line, got {rows.shape[1]}")
    T = rows.shape[0]
    poses = np.tile(np.eye(4), (T, 1, 1))
    poses[:, :3, :4] = rows.reshape(T, 3, 4)
    return poses


def save_poses(poses: np.ndarray, path) -> None:
    poses = np.asarray(poses, dtype=np.float64)
    rows = poses[:, :3, :4].reshape(len(poses), 12)
    np.savetxt(path, rows, fmt="%.17g")


def load_odometry(path) -> np.ndarray:
    """(T, 3) float64 per-scan relative motions (dx, dy, dtheta)."""
    rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if rows.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 floats per line, got {rows.shape[1]}")
    return rows


def save_odometry(odom: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(odom, dtype=np.float64), fmt="%.17g")


def list_scan_files(directory) -> list:
    """Sorted .bin files inside a scan directory."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(".bin"))
    return [os.path.join(directory, n) for n in names]
