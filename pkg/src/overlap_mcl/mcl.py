"""Monte-Carlo localization: motion prediction, decomposed overlap x yaw
weighting with per-cell memoization, ESS-triggered systematic resampling,
and pose extraction.

Particles live in a flat (N, 3) pose array plus a weight vector.  The
observation update scores the query scan once per distinct occupied grid
cell holding at least one particle; every particle in that cell reuses the
cached (overlap, yaw) pair.  All randomness flows through an injected
``numpy.random.Generator`` so a fixed seed reproduces runs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .angles import wrap_deg, wrap_rad
from .grid import VirtualScanGrid
from .overlap import ObservationScorer
from .scan import RangeImage

DEFAULT_WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class Particle:
    x: float
    y: float
    theta: float
    weight: float


@dataclass
class ParticleSet:
    """Weighted pose hypotheses. ``poses`` is (N, 3): x, y, theta."""

    poses: np.ndarray
    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.poses = np.ascontiguousarray(np.asarray(self.poses, dtype=np.float64).reshape(-1, 3))
        self.weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64).reshape(-1))
        if self.poses.shape[0] != self.weights.shape[0]:
            raise ValueError("poses and weights disagree on particle count")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be non-negative")
        if self.normalized and abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("normalized flag set but weights do not sum to 1")

    @property
    def n(self) -> int:
        return self.poses.shape[0]

    def particle(self, i: int) -> Particle:
        x, y, t = self.poses[i]
        return Particle(float(x), float(y), float(t), float(self.weights[i]))

    @property
    def particles(self):
        return [self.particle(i) for i in range(self.n)]

    def normalize(self) -> "ParticleSet":
        total = self.weights.sum()
        if total <= 0.0:
            raise ValueError("cannot normalize all-zero weights")
        return ParticleSet(self.poses, self.weights / total, normalized=True)


@dataclass(frozen=True)
class OdometryControl:
    """Relative 2-D motion between consecutive scans, in the sensor frame."""

    dx: float
    dy: float
    dtheta: float

    def __post_init__(self):
        if not all(np.isfinite([self.dx, self.dy, self.dtheta])):
            raise ValueError("odometry control must be finite")

    @classmethod
    def from_array(cls, arr) -> "OdometryControl":
        dx, dy, dt = (float(a) for a in arr)
        return cls(dx, dy, dt)


@dataclass(frozen=True)
class MotionNoise:
    """Odometry-model noise coefficients (rot-trans-rot decomposition)."""

    a1: float = 0.05
    a2: float = 0.05
    a3: float = 0.02
    a4: float = 0.02

    def __post_init__(self):
        if min(self.a1, self.a2, self.a3, self.a4) < 0.0:
            raise ValueError("noise coefficients must be non-negative")


@dataclass(frozen=True)
class YawModelParams:
    """Gaussian heading-agreement model width, degrees."""

    sigma_deg: float = 5.0

    def __post_init__(self):
        if self.sigma_deg <= 0.0:
            raise ValueError("sigma_deg must be positive")


@dataclass(frozen=True)
class PoseEstimate:
    x: float
    y: float
    theta: float
    converged: bool


@dataclass(frozen=True)
class StepTelemetry:
    evaluations: int
    ess: float


@dataclass(frozen=True)
class FilterParams:
    motion_noise: MotionNoise = MotionNoise()
    yaw: YawModelParams = YawModelParams()
    weight_floor: float = DEFAULT_WEIGHT_FLOOR
    overlap_exponent: float = 1.0
    resample_threshold: float = 0.5
    convergence_spread_m: float = 5.0


def initialize_global(grid: VirtualScanGrid, n: int, rng: np.random.Generator) -> ParticleSet:
    """Uniform particles over the occupied cells (uniform within each cell).

    Headings are uniform in [-pi, pi); weights start equal.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    cells = grid.occupied_cells()
    if len(cells) == 0:
        raise ValueError("grid has no occupied cells")
    picks = rng.integers(0, len(cells), size=n)
    offsets = rng.random((n, 2)) * grid.resolution
    thetas = rng.uniform(-np.pi, np.pi, size=n)
    poses = np.empty((n, 3))
    poses[:, 0] = grid.origin[0] + cells[picks, 0] * grid.resolution + offsets[:, 0]
    poses[:, 1] = grid.origin[1] + cells[picks, 1] * grid.resolution + offsets[:, 1]
    poses[:, 2] = thetas
    return ParticleSet(poses, np.full(n, 1.0 / n), normalized=True)


def predict(ps: ParticleSet, u: OdometryControl, noise: MotionNoise,
            rng: np.random.Generator) -> ParticleSet:
    """Advance every particle by the control with sampled odometry noise.

    The control is decomposed into rotation - translation - rotation; each
    component is perturbed by zero-mean Gaussian noise whose std scales
    with the motion magnitudes through the alpha coefficients.  Weights are
    untouched.
    """
    if ps.n == 0:
        raise ValueError("empty particle set")
    trans = float(np.hypot(u.dx, u.dy))
    rot1 = float(np.arctan2(u.dy, u.dx)) if trans > 1e-12 else 0.0
    rot2 = float(wrap_rad(u.dtheta - rot1))

    std_rot1 = noise.a1 * abs(rot1) + noise.a2 * trans
    std_rot2 = noise.a1 * abs(rot2) + noise.a2 * trans
    std_trans = noise.a3 * trans + noise.a4 * (abs(rot1) + abs(rot2))

    n = ps.n
    r1 = rot1 + (rng.normal(0.0, std_rot1, n) if std_rot1 > 0 else 0.0)
    tr = trans + (rng.normal(0.0, std_trans, n) if std_trans > 0 else 0.0)
    r2 = rot2 + (rng.normal(0.0, std_rot2, n) if std_rot2 > 0 else 0.0)

    heading = ps.poses[:, 2] + r1
    poses = np.empty_like(ps.poses)
    poses[:, 0] = ps.poses[:, 0] + tr * np.cos(heading)
    poses[:, 1] = ps.poses[:, 1] + tr * np.sin(heading)
    poses[:, 2] = wrap_rad(ps.poses[:, 2] + r1 + r2)
    return ParticleSet(poses, ps.weights.copy(), normalized=ps.normalized)


def reweight(ps: ParticleSet, multipliers: np.ndarray) -> ParticleSet:
    """Multiply weights, then normalize.

    Falls back to uniform weights if everything underflows to zero (can
    only happen with a degenerate observation model).
    """
    w = ps.weights * np.asarray(multipliers, dtype=np.float64)
    total = w.sum()
    if total <= 0.0 or not np.isfinite(total):
        w = np.full(ps.n, 1.0 / ps.n)
    else:
        w = w / total
    return ParticleSet(ps.poses, w, normalized=True)


def particle_cells(ps: ParticleSet, grid: VirtualScanGrid):
    """Flat occupied-cell id per particle, -1 for off-grid/unoccupied.

    Flat id is ix * ny + iy.
    """
    nx, ny = grid.dims
    ix = np.floor((ps.poses[:, 0] - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((ps.poses[:, 1] - grid.origin[1]) / grid.resolution).astype(np.int64)
    on = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    flat = np.full(ps.n, -1, dtype=np.int64)
    occ = np.zeros(ps.n, dtype=bool)
    occ[on] = grid.occupancy[ix[on], iy[on]]
    flat[occ] = ix[occ] * ny + iy[occ]
    return flat


def update_weights(ps: ParticleSet, query: RangeImage, grid: VirtualScanGrid,
                   scorer: ObservationScorer, yaw: YawModelParams,
                   weight_floor: float = DEFAULT_WEIGHT_FLOOR,
                   overlap_exponent: float = 1.0):
    """Observation update: weight by overlap and heading agreement.

    For every distinct occupied cell containing at least one particle, the
    scorer runs once against that cell's cached virtual scan; the particle
    multiplier is ``overlap**exponent * exp(-wrap(yaw_est - theta)^2 /
    (2 sigma^2))``.  Particles off the grid or in unoccupied cells get the
    weight floor instead.  Returns the normalized set and the number of
    scorer evaluations (== distinct cells scored).
    """
    if ps.n == 0:
        raise ValueError("empty particle set")
    ny = grid.dims[1]
    flat = particle_cells(ps, grid)
    mult = np.full(ps.n, weight_floor, dtype=np.float64)
    scored = flat >= 0
    evaluations = 0
    if scored.any():
        cells, inverse = np.unique(flat[scored], return_inverse=True)
        overlaps = np.empty(len(cells))
        yaw_est = np.empty(len(cells))
        for ci, cell in enumerate(cells):
            est = scorer.score(query, grid.scan_at(int(cell) // ny, int(cell) % ny))
            overlaps[ci] = est.overlap
            yaw_est[ci] = est.yaw_offset_deg
        evaluations = len(cells)
        theta_deg = np.rad2deg(ps.poses[scored, 2])
        residual = wrap_deg(yaw_est[inverse] - theta_deg)
        yaw_factor = np.exp(-0.5 * (residual / yaw.sigma_deg) ** 2)
        mult[scored] = (overlaps[inverse] ** overlap_exponent) * yaw_factor
    return reweight(ps, mult), evaluations


def effective_sample_size(ps: ParticleSet) -> float:
    """ESS = 1 / sum(w^2); requires a normalized set."""
    if not ps.normalized:
        raise ValueError("effective sample size needs normalized weights")
    return float(1.0 / np.sum(ps.weights ** 2))


def systematic_resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Low-variance resampling to N equally weighted particles."""
    n = ps.n
    positions = (rng.uniform(0.0, 1.0) + np.arange(n)) / n
    cumulative = np.cumsum(ps.weights)
    cumulative[-1] = 1.0  # guard against float round-off
    idx = np.searchsorted(cumulative, positions, side="right")
    idx = np.minimum(idx, n - 1)
    return ParticleSet(ps.poses[idx].copy(), np.full(n, 1.0 / n), normalized=True)


def resample_if_needed(ps: ParticleSet, rng: np.random.Generator,
                       threshold: float = 0.5) -> ParticleSet:
    """Systematic resample when ESS drops below ``threshold`` * N."""
    if not ps.normalized:
        raise ValueError("resampling needs normalized weights")
    if effective_sample_size(ps) < threshold * ps.n:
        return systematic_resample(ps, rng)
    return ps


def position_spread(ps: ParticleSet) -> float:
    """Weighted standard deviation of particle positions (meters)."""
    w = ps.weights / ps.weights.sum()
    mx = float(w @ ps.poses[:, 0])
    my = float(w @ ps.poses[:, 1])
    var = float(w @ ((ps.poses[:, 0] - mx) ** 2 + (ps.poses[:, 1] - my) ** 2))
    return float(np.sqrt(max(var, 0.0)))


def estimate_pose(ps: ParticleSet, convergence_spread_m: float = 5.0) -> PoseEstimate:
    """Weighted mean position and circular mean heading.

    ``converged`` is set when the weighted positional spread falls below
    the given threshold.
    """
    if not ps.normalized:
        raise ValueError("pose estimation needs normalized weights")
    w = ps.weights
    x = float(w @ ps.poses[:, 0])
    y = float(w @ ps.poses[:, 1])
    theta = float(np.arctan2(w @ np.sin(ps.poses[:, 2]), w @ np.cos(ps.poses[:, 2])))
    return PoseEstimate(x, y, wrap_rad(theta),
                        position_spread(ps) < convergence_spread_m)


def step(ps: ParticleSet, u: OdometryControl, query: RangeImage,
         grid: VirtualScanGrid, scorer: ObservationScorer,
         params: FilterParams, rng: np.random.Generator):
    """One full filter iteration: predict, weight, resample, estimate."""
    ps = predict(ps, u, params.motion_noise, rng)
    ps, evaluations = update_weights(ps, query, grid, scorer, params.yaw,
                                     params.weight_floor, params.overlap_exponent)
    ess = effective_sample_size(ps)
    ps = resample_if_needed(ps, rng, params.resample_threshold)
    pose = estimate_pose(ps, params.convergence_spread_m)
    return ps, pose, StepTelemetry(evaluations, ess)
