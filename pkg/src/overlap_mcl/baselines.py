"""Comparison observation models: beam-end and range-histogram.

The beam-end (likelihood-field) model weights a pose by the product of
Gaussians over each scan endpoint's distance to the nearest map point,
using a voxel-downsampled map with a KD-tree index.  The histogram model
compares normalized range histograms of the query and a virtual scan with
the 1-D Wasserstein distance and converts the distance to a similarity
weight ``exp(-d / lambda)`` — larger distance, smaller weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .grid import voxel_downsample
from .scan import INVALID_RANGE, PointCloud, RangeImage

DEFAULT_SIGMA_HIT = 0.5
DEFAULT_SAMPLE_COUNT = 1000
DEFAULT_FIELD_VOXEL = 0.1
DEFAULT_BINS = 100
DEFAULT_LAMBDA = 5.0


@dataclass(frozen=True, eq=False)
class LikelihoodField:
    """Voxel-deduplicated map points with a nearest-neighbor index."""

    points: np.ndarray
    voxel_size: float
    sigma_hit: float
    sample_count: int
    tree: cKDTree

    def __post_init__(self):
        if self.voxel_size <= 0.0 or self.sigma_hit <= 0.0:
            raise ValueError("voxel_size and sigma_hit must be positive")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")


def build_likelihood_field(map_points: np.ndarray,
                           voxel_size: float = DEFAULT_FIELD_VOXEL,
                           sigma_hit: float = DEFAULT_SIGMA_HIT,
                           sample_count: int = DEFAULT_SAMPLE_COUNT) -> LikelihoodField:
    """Voxel-downsample the map and index it for NN queries.

    The downsample keeps the point nearest each voxel center, so the field
    is independent of map point order and duplicates.
    """
    pts = voxel_downsample(np.asarray(map_points, dtype=np.float64), voxel_size,
                           mode="center")
    if len(pts) == 0:
        raise ValueError("empty map")
    return LikelihoodField(pts, voxel_size, sigma_hit, sample_count, cKDTree(pts))


def subsample_endpoints(cloud: PointCloud, count: int) -> np.ndarray:
    """Deterministic endpoint subsample: evenly spaced indices."""
    n = len(cloud)
    if n == 0:
        return cloud.points.copy()
    if n <= count:
        return cloud.points.copy()
    idx = np.linspace(0, n - 1, count).round().astype(np.int64)
    return cloud.points[idx]


def transform_endpoints(endpoints: np.ndarray, pose, sensor_height: float) -> np.ndarray:
    """Apply a planar pose at sensor height to sensor-frame endpoints."""
    x, y, theta = (float(p) for p in pose)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty_like(endpoints)
    out[:, 0] = c * endpoints[:, 0] - s * endpoints[:, 1] + x
    out[:, 1] = s * endpoints[:, 0] + c * endpoints[:, 1] + y
    out[:, 2] = endpoints[:, 2] + sensor_height
    return out


def beam_end_log_weight(query: PointCloud, pose, field: LikelihoodField,
                        sensor_height: float = 0.0) -> float:
    """Log beam-end weight: sum of -d^2 / (2 sigma^2) over endpoints."""
    ends = subsample_endpoints(query, field.sample_count)
    if len(ends) == 0:
        return 0.0
    world = transform_endpoints(ends, pose, sensor_height)
    d, _ = field.tree.query(world)
    return float(np.sum(-0.5 * (d / field.sigma_hit) ** 2))


def beam_end_weight(query: PointCloud, pose, field: LikelihoodField,
                    sensor_height: float = 0.0) -> float:
    """Beam-end likelihood (product of endpoint Gaussians).

    Computed in log space; the returned value underflows to 0.0 for poses
    far from the map, so prefer ``beam_end_log_weight`` when comparing many
    poses.
    """
    return float(np.exp(beam_end_log_weight(query, pose, field, sensor_height)))


@dataclass(frozen=True)
class RangeHistogram:
    """Normalized histogram of valid ranges over [0, r_max]."""

    bins: np.ndarray
    bin_width: float

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.float64).reshape(-1)
        if bins.shape[0] < 2:
            raise ValueError("need at least two bins")
        if np.any(bins < 0.0) or abs(bins.sum() - 1.0) > 1e-9:
            raise ValueError("histogram must be normalized and non-negative")
        object.__setattr__(self, "bins", bins)
        if self.bin_width <= 0.0:
            raise ValueError("bin_width must be positive")

    @property
    def num_bins(self) -> int:
        return self.bins.shape[0]


def range_histogram(img: RangeImage, num_bins: int = DEFAULT_BINS) -> RangeHistogram:
    """Histogram the image's valid ranges into equal bins over [0, r_max].

    A scan without any valid return yields the uniform histogram.
    """
    if num_bins < 2:
        raise ValueError("need at least two bins")
    r_max = img.intrinsics.r_max
    valid = img.range[img.valid].astype(np.float64)
    if valid.size == 0:
        return RangeHistogram(np.full(num_bins, 1.0 / num_bins), r_max / num_bins)
    counts, _ = np.histogram(valid, bins=num_bins, range=(0.0, r_max))
    return RangeHistogram(counts / counts.sum(), r_max / num_bins)


def range_histogram_from_plane(plane: np.ndarray, r_max: float,
                               num_bins: int = DEFAULT_BINS) -> RangeHistogram:
    """Same as range_histogram but straight from a stored range plane."""
    if num_bins < 2:
        raise ValueError("need at least two bins")
    valid = plane[plane != np.float32(INVALID_RANGE)].astype(np.float64)
    if valid.size == 0:
        return RangeHistogram(np.full(num_bins, 1.0 / num_bins), r_max / num_bins)
    counts, _ = np.histogram(valid, bins=num_bins, range=(0.0, r_max))
    return RangeHistogram(counts / counts.sum(), r_max / num_bins)


def wasserstein_1d(h1: RangeHistogram, h2: RangeHistogram) -> float:
    """W1 distance between same-support histograms: L1 between CDFs."""
    if h1.num_bins != h2.num_bins:
        raise ValueError(f"bin count mismatch: {h1.num_bins} vs {h2.num_bins}")
    if abs(h1.bin_width - h2.bin_width) > 1e-12:
        raise ValueError("histograms use different bin widths")
    cdf1 = np.cumsum(h1.bins)
    cdf2 = np.cumsum(h2.bins)
    return float(np.abs(cdf1 - cdf2).sum() * h1.bin_width)


def histogram_weight(query: RangeImage, map_scan: RangeImage,
                     lambda_m: float = DEFAULT_LAMBDA,
                     num_bins: int = DEFAULT_BINS) -> float:
    """Similarity weight exp(-W1 / lambda): 1 at zero distance, decreasing."""
    if lambda_m <= 0.0:
        raise ValueError("lambda must be positive")
    d = wasserstein_1d(range_histogram(query, num_bins),
                       range_histogram(map_scan, num_bins))
    return float(np.exp(-d / lambda_m))
