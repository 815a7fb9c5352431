"""Evaluation protocol: success rates over particle-count ladders,
RMSE on successful runs, and observation-model evaluation counts.

A run is judged successful when the filter reports convergence at some
step and the location error stays inside the success radius at every
checkpoint (every ``check_interval`` frames from the convergence step on).
RMSE metrics are computed from the convergence step onward and only for
successful runs.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import mcl
from .angles import wrap_deg
from .models import SensorModel
from .grid import VirtualScanGrid

DEFAULT_PARTICLE_LADDER = (500, 1000, 5000, 10000)


@dataclass
class RunResult:
    """Per-step record of one localization run."""

    estimates: np.ndarray    # (T, 3) estimated (x, y, theta)
    true_poses: np.ndarray   # (T, 3)
    converged: np.ndarray    # (T,) bool
    ess: np.ndarray          # (T,)
    evaluations: np.ndarray  # (T,) int
    wall_time_s: np.ndarray  # (T,)

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=np.float64).reshape(-1, 3)
        self.true_poses = np.asarray(self.true_poses, dtype=np.float64).reshape(-1, 3)
        self.converged = np.asarray(self.converged, dtype=bool).reshape(-1)
        self.ess = np.asarray(self.ess, dtype=np.float64).reshape(-1)
        self.evaluations = np.asarray(self.evaluations, dtype=np.int64).reshape(-1)
        self.wall_time_s = np.asarray(self.wall_time_s, dtype=np.float64).reshape(-1)
        T = len(self.estimates)
        for name in ("true_poses", "converged", "ess", "evaluations", "wall_time_s"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{name} length disagrees with estimates")

    def __len__(self):
        return len(self.estimates)

    @property
    def convergence_step(self):
        hits = np.flatnonzero(self.converged)
        return int(hits[0]) if len(hits) else None

    def location_errors(self) -> np.ndarray:
        d = self.estimates[:, :2] - self.true_poses[:, :2]
        return np.hypot(d[:, 0], d[:, 1])

    def yaw_errors_deg(self) -> np.ndarray:
        return wrap_deg(np.rad2deg(self.estimates[:, 2] - self.true_poses[:, 2]))


@dataclass(frozen=True)
class EvalConfig:
    particle_counts: tuple = DEFAULT_PARTICLE_LADDER
    runs_per_setup: int = 10
    success_radius_m: float = 5.0
    check_interval: int = 100

    def __post_init__(self):
        if not self.particle_counts or min(self.particle_counts) < 1 or self.runs_per_setup < 1:
            raise ValueError("particle counts and runs must be positive")
        if self.success_radius_m <= 0 or self.check_interval < 1:
            raise ValueError("success radius and check interval must be positive")


def judge_success(run: RunResult, cfg: EvalConfig) -> bool:
    """True when the run converged and stayed within the success radius at
    every subsequent checkpoint."""
    tc = run.convergence_step
    if tc is None:
        return False
    errors = run.location_errors()
    checkpoints = range(tc, len(run), cfg.check_interval)
    return all(errors[t] < cfg.success_radius_m for t in checkpoints)


def success_rate(results, cfg: EvalConfig) -> float:
    results = list(results)
    if not results:
        raise ValueError("no runs to judge")
    return sum(judge_success(r, cfg) for r in results) / len(results)


def rmse_metrics(run: RunResult):
    """(location RMSE m, yaw RMSE deg) from the convergence step onward."""
    tc = run.convergence_step
    if tc is None:
        raise ValueError("run never converged; RMSE undefined")
    loc = run.location_errors()[tc:]
    yaw = run.yaw_errors_deg()[tc:]
    return (float(np.sqrt(np.mean(loc ** 2))), float(np.sqrt(np.mean(yaw ** 2))))


def evaluation_count_report(results_by_model, occupied_cells=None):
    """Per-step evaluation-count statistics per model.

    Returns {model: (T_max,) mean counts across runs}.  When
    ``occupied_cells`` is given, overlap-model counts are checked against
    it (memoization bound).
    """
    report = {}
    for name, runs in results_by_model.items():
        T = max(len(r) for r in runs)
        sums = np.zeros(T)
        hits = np.zeros(T)
        for r in runs:
            if name == "overlap" and occupied_cells is not None:
                if int(r.evaluations.max(initial=0)) > occupied_cells:
                    raise AssertionError(
                        "overlap evaluations exceed the occupied-cell count")
            sums[: len(r)] += r.evaluations
            hits[: len(r)] += 1
        report[name] = sums / np.maximum(hits, 1)
    return report


def run_localization(grid: VirtualScanGrid, model: SensorModel, frames,
                     odometry: np.ndarray, true_poses: np.ndarray,
                     n_particles: int, seed,
                     params: mcl.FilterParams = mcl.FilterParams()) -> RunResult:
    """Global localization over a frame sequence with a seeded filter."""
    rng = np.random.default_rng(seed)
    ps = mcl.initialize_global(grid, n_particles, rng)
    T = len(frames)
    estimates = np.zeros((T, 3))
    converged = np.zeros(T, dtype=bool)
    ess = np.zeros(T)
    evaluations = np.zeros(T, dtype=np.int64)
    wall = np.zeros(T)
    for t in range(T):
        t0 = time.perf_counter()
        u = mcl.OdometryControl.from_array(odometry[t])
        ps = mcl.predict(ps, u, params.motion_noise, rng)
        ps, n_eval = model.update(ps, frames[t])
        ess[t] = mcl.effective_sample_size(ps)
        ps = mcl.resample_if_needed(ps, rng, params.resample_threshold)
        pose = mcl.estimate_pose(ps, params.convergence_spread_m)
        wall[t] = time.perf_counter() - t0
        estimates[t] = (pose.x, pose.y, pose.theta)
        converged[t] = pose.converged
        evaluations[t] = n_eval
    return RunResult(estimates, np.asarray(true_poses, dtype=np.float64)[:, :3].copy(),
                     converged, ess, evaluations, wall)


def run_seed(base_seed: int, model_name: str, n_particles: int, run_idx: int):
    """Deterministic per-run seed material."""
    from .models import MODEL_NAMES
    return np.random.SeedSequence(
        (int(base_seed), MODEL_NAMES.index(model_name), int(n_particles), int(run_idx)))


@dataclass
class ProtocolResult:
    """All runs of an evaluation sweep, keyed by (model, particle count)."""

    runs: dict = field(default_factory=dict)  # (model, n) -> list[RunResult]
    config: EvalConfig = EvalConfig()

    def success(self, model: str, n: int) -> float:
        return success_rate(self.runs[(model, n)], self.config)

    def successful_runs(self, model: str, n: int):
        return [r for r in self.runs[(model, n)] if judge_success(r, self.config)]


def run_protocol(grid, model_factory, frames, odometry, true_poses,
                 models, cfg: EvalConfig, base_seed: int = 0,
                 params: mcl.FilterParams = mcl.FilterParams(),
                 verbose: bool = False) -> ProtocolResult:
    """Sweep models x particle counts with ``runs_per_setup`` seeded runs.

    ``model_factory(name)`` builds the observation model once per name;
    ``models`` may map a model name to its own particle ladder, or be a
    list of names sharing the config ladder.
    """
    if not isinstance(models, dict):
        models = {name: cfg.particle_counts for name in models}
    out = ProtocolResult(config=cfg)
    for name, ladder in models.items():
        model = model_factory(name)
        for n in ladder:
            runs = []
            for ri in range(cfg.runs_per_setup):
                seed = run_seed(base_seed, name, n, ri)
                t0 = time.perf_counter()
                run = run_localization(grid, model, frames, odometry,
                                       true_poses, n, seed, params)
                runs.append(run)
                if verbose:
                    ok = judge_success(run, cfg)
                    print(f"{name} N={n} run {ri}: "
                          f"{'success' if ok else 'failure'} "
                          f"({time.perf_counter() - t0:.1f}s)")
            out.runs[(name, n)] = runs
    return out


def write_report(result: ProtocolResult, out_dir) -> None:
    """Emit per-run logs, aggregate tables (text + CSV), and the per-step
    evaluation-count CSV."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config

    with open(os.path.join(out_dir, "success_rates.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "particles", "runs", "successes", "success_rate"])
        for (name, n), runs in sorted(result.runs.items()):
            successes = sum(judge_success(r, cfg) for r in runs)
            w.writerow([name, n, len(runs), successes, successes / len(runs)])

    rows = []
    for (name, n), runs in sorted(result.runs.items()):
        locs, yaws = [], []
        for ri, run in enumerate(runs):
            if not judge_success(run, cfg):
                continue
            loc, yaw = rmse_metrics(run)
            locs.append(loc)
            yaws.append(yaw)
            rows.append([name, n, ri, f"{loc:.4f}", f"{yaw:.4f}"])
        if locs:
            rows.append([name, n, "mean+-std",
                         f"{np.mean(locs):.4f}+-{np.std(locs):.4f}",
                         f"{np.mean(yaws):.4f}+-{np.std(yaws):.4f}"])
    with open(os.path.join(out_dir, "rmse.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "particles", "run", "location_rmse_m", "yaw_rmse_deg"])
        w.writerows(rows)

    with open(os.path.join(out_dir, "evaluations.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "particles", "run", "step", "evaluations", "ess", "wall_ms"])
        for (name, n), runs in sorted(result.runs.items()):
            for ri, run in enumerate(runs):
                for t in range(len(run)):
                    w.writerow([name, n, ri, t, int(run.evaluations[t]),
                                f"{run.ess[t]:.2f}", f"{run.wall_time_s[t] * 1e3:.2f}"])

    run_dir = os.path.join(out_dir, "runs")
    os.makedirs(run_dir, exist_ok=True)
    for (name, n), runs in sorted(result.runs.items()):
        for ri, run in enumerate(runs):
            path = os.path.join(run_dir, f"{name}_{n}_{ri:02d}.txt")
            write_trajectory(run, path)

    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        f.write(format_summary(result))


def format_summary(result: ProtocolResult) -> str:
    cfg = result.config
    lines = ["model        N      success   loc RMSE [m]      yaw RMSE [deg]",
             "-" * 64]
    for (name, n), runs in sorted(result.runs.items()):
        rate = success_rate(runs, cfg)
        good = [rmse_metrics(r) for r in runs if judge_success(r, cfg)]
        if good:
            locs = [g[0] for g in good]
            yaws = [g[1] for g in good]
            loc_s = f"{np.mean(locs):.2f} +- {np.std(locs):.2f}"
            yaw_s = f"{np.mean(yaws):.2f} +- {np.std(yaws):.2f}"
        else:
            loc_s = yaw_s = "n/a"
        lines.append(f"{name:<12} {n:<6} {rate:<9.2f} {loc_s:<17} {yaw_s}")
    return "\n".join(lines) + "\n"


def write_trajectory(run: RunResult, path) -> None:
    """One line per scan: timestamp x y theta converged ess evaluations."""
    with open(path, "w") as f:
        for t in range(len(run)):
            x, y, theta = run.estimates[t]
            f.write(f"{t}.0 {x:.9f} {y:.9f} {theta:.9f} "
                    f"{int(run.converged[t])} {run.ess[t]:.6f} "
                    f"{int(run.evaluations[t])}\n")
