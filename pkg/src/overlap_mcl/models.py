"""Observation-model adapters sharing one filter-update interface.

Each model consumes a per-step ``Frame`` (range image + raw cloud) and
returns the reweighted particle set plus its evaluation count — the number
of distinct model invocations that step, the quantity compared across
models in the evaluation harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import baselines, mcl
from .grid import VirtualScanGrid
from .overlap import ObservationScorer
from .scan import PointCloud, RangeImage

MODEL_NAMES = ("overlap", "beamend", "histogram")


@dataclass(frozen=True)
class Frame:
    """One localization step's sensor data."""

    image: RangeImage
    cloud: PointCloud


class SensorModel(Protocol):
    def update(self, ps: mcl.ParticleSet, frame: Frame): ...


class OverlapYawModel:
    """The decomposed overlap x yaw model over the virtual-scan grid."""

    def __init__(self, grid: VirtualScanGrid, scorer: ObservationScorer,
                 yaw: mcl.YawModelParams = mcl.YawModelParams(),
                 weight_floor: float = mcl.DEFAULT_WEIGHT_FLOOR,
                 overlap_exponent: float = 1.0):
        self.grid = grid
        self.scorer = scorer
        self.yaw = yaw
        self.weight_floor = weight_floor
        self.overlap_exponent = overlap_exponent

    def update(self, ps: mcl.ParticleSet, frame: Frame):
        return mcl.update_weights(ps, frame.image, self.grid, self.scorer,
                                  self.yaw, self.weight_floor,
                                  self.overlap_exponent)


class BeamEndModel:
    """Likelihood-field weighting; one evaluation per particle.

    Log-weights are shifted by their maximum before exponentiation so the
    product of hundreds of endpoint Gaussians cannot underflow the whole
    particle set.
    """

    def __init__(self, field: baselines.LikelihoodField, sensor_height: float):
        self.field = field
        self.sensor_height = sensor_height

    def update(self, ps: mcl.ParticleSet, frame: Frame):
        ends = baselines.subsample_endpoints(frame.cloud, self.field.sample_count)
        n = ps.n
        if len(ends) == 0:
            return mcl.reweight(ps, np.ones(n)), n
        # transform every particle's endpoint set in one batch
        c = np.cos(ps.poses[:, 2])[:, None]
        s = np.sin(ps.poses[:, 2])[:, None]
        ex, ey, ez = ends[:, 0][None, :], ends[:, 1][None, :], ends[:, 2][None, :]
        world = np.empty((n, len(ends), 3))
        world[:, :, 0] = c * ex - s * ey + ps.poses[:, 0][:, None]
        world[:, :, 1] = s * ex + c * ey + ps.poses[:, 1][:, None]
        world[:, :, 2] = ez + self.sensor_height
        d, _ = self.field.tree.query(world.reshape(-1, 3), workers=-1)
        log_w = np.sum(-0.5 * (d.reshape(n, -1) / self.field.sigma_hit) ** 2, axis=1)
        return mcl.reweight(ps, np.exp(log_w - log_w.max())), n


class HistogramModel:
    """Range-histogram similarity against cached virtual scans.

    Cell histograms are precomputed once per map; Wasserstein distances are
    memoized per distinct occupied cell per step, mirroring the overlap
    model's evaluation accounting.
    """

    def __init__(self, grid: VirtualScanGrid, lambda_m: float = baselines.DEFAULT_LAMBDA,
                 num_bins: int = baselines.DEFAULT_BINS,
                 weight_floor: float = mcl.DEFAULT_WEIGHT_FLOOR):
        self.grid = grid
        self.lambda_m = float(lambda_m)
        self.num_bins = int(num_bins)
        self.weight_floor = float(weight_floor)
        r_max = grid.intrinsics.r_max
        ny = grid.dims[1]
        self._cell_hist = {}
        for ix, iy in grid.occupied_cells():
            hist = baselines.range_histogram_from_plane(
                grid.range_plane(int(ix), int(iy)), r_max, self.num_bins)
            self._cell_hist[int(ix) * ny + int(iy)] = hist

    def update(self, ps: mcl.ParticleSet, frame: Frame):
        query_hist = baselines.range_histogram(frame.image, self.num_bins)
        flat = mcl.particle_cells(ps, self.grid)
        mult = np.full(ps.n, self.weight_floor)
        scored = flat >= 0
        evaluations = 0
        if scored.any():
            cells, inverse = np.unique(flat[scored], return_inverse=True)
            weights = np.empty(len(cells))
            for ci, cell in enumerate(cells):
                d = baselines.wasserstein_1d(query_hist, self._cell_hist[int(cell)])
                weights[ci] = np.exp(-d / self.lambda_m)
            evaluations = len(cells)
            mult[scored] = weights[inverse]
        return mcl.reweight(ps, mult), evaluations


def make_model(name: str, grid: VirtualScanGrid, *,
               scorer: ObservationScorer | None = None,
               yaw: mcl.YawModelParams = mcl.YawModelParams(),
               map_points: np.ndarray | None = None,
               sensor_height: float | None = None,
               field_voxel: float = baselines.DEFAULT_FIELD_VOXEL,
               sigma_hit: float = baselines.DEFAULT_SIGMA_HIT,
               sample_count: int = baselines.DEFAULT_SAMPLE_COUNT,
               lambda_m: float = baselines.DEFAULT_LAMBDA,
               num_bins: int = baselines.DEFAULT_BINS,
               weight_floor: float = mcl.DEFAULT_WEIGHT_FLOOR) -> SensorModel:
    """Instantiate an observation model by CLI name."""
    if name == "overlap":
        if scorer is None:
            from .overlap import GeometricScorer
            scorer = GeometricScorer()
        return OverlapYawModel(grid, scorer, yaw, weight_floor)
    if name == "beamend":
        if map_points is None:
            raise ValueError("the beam-end model needs the map point cloud")
        field = baselines.build_likelihood_field(map_points, field_voxel,
                                                 sigma_hit, sample_count)
        h = grid.sensor_height if sensor_height is None else sensor_height
        return BeamEndModel(field, h)
    if name == "histogram":
        return HistogramModel(grid, lambda_m, num_bins, weight_floor)
    raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
