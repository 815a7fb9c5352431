"""Angle wrapping helpers shared across the package."""

import numpy as np


def wrap_rad(theta):
    """Wrap angle(s) in radians to [-pi, pi)."""
    wrapped = (np.asarray(theta, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def wrap_deg(theta):
    """Wrap angle(s) in degrees to [-180, 180)."""
    wrapped = (np.asarray(theta, dtype=float) + 180.0) % 360.0 - 180.0
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped
