"""Small rigid-transform helpers for 2-D poses embedded in 3-D."""

from __future__ import annotations

import numpy as np

from .angles import wrap_rad


def pose_matrix(x: float, y: float, theta: float, z: float = 0.0) -> np.ndarray:
    """4x4 map-from-sensor transform for a planar pose at height z."""
    c, s = np.cos(theta), np.sin(theta)
    m = np.eye(4)
    m[0, 0], m[0, 1] = c, -s
    m[1, 0], m[1, 1] = s, c
    m[:3, 3] = (x, y, z)
    return m


def invert(pose: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    R = pose[:3, :3]
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ pose[:3, 3]
    return out


def planar_pose(pose: np.ndarray):
    """Extract (x, y, yaw) from a 4x4 transform."""
    return float(pose[0, 3]), float(pose[1, 3]), float(np.arctan2(pose[1, 0], pose[0, 0]))


def relative_motion(prev, curr):
    """2-D motion (dx, dy, dtheta) taking pose ``prev`` to ``curr``.

    Both poses are (x, y, theta) triples; the translation is expressed in
    the frame of ``prev``.
    """
    px, py, pt = prev
    cx, cy, ct = curr
    c, s = np.cos(pt), np.sin(pt)
    dx_w, dy_w = cx - px, cy - py
    return (c * dx_w + s * dy_w, -s * dx_w + c * dy_w, wrap_rad(ct - pt))


def compose_motion(pose, delta):
    """Apply a relative 2-D motion (in the pose's frame) to (x, y, theta)."""
    x, y, t = pose
    dx, dy, dt = delta
    c, s = np.cos(t), np.sin(t)
    return (x + c * dx - s * dy, y + s * dx + c * dy, wrap_rad(t + dt))
