"""Command-line front end.

Subcommands: ``simulate`` writes a synthetic dataset, ``build-map`` turns
registered scans into a virtual-scan grid, ``localize`` runs the particle
filter over a scan directory with a chosen observation model, and
``evaluate`` sweeps models and particle counts, emitting report tables.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluation, mcl, scan_io, sim
from .grid import aggregate, build_grid, load_grid, save_grid
from .models import MODEL_NAMES, Frame, make_model
from .overlap import GeometricScorer
from .scan import SensorIntrinsics, spherical_project
from .transforms import planar_pose


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--traj-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--speed", type=float, default=1.25)
    p.add_argument("--perturb-fraction", type=float, default=0.0,
                   help="fraction of parked cars changed before scanning")
    p.add_argument("--perturb-seed", type=int, default=1)
    p.set_defaults(func=cmd_simulate)


def cmd_simulate(args):
    world = sim.make_world(args.world_seed)
    scanned = world
    if args.perturb_fraction > 0.0:
        scanned = sim.perturb_world(world, args.perturb_seed, args.perturb_fraction)
    traj = sim.default_trajectory(args.traj_seed, speed=args.speed)
    os.makedirs(args.out, exist_ok=True)
    sim.generate_dataset(scanned, traj, sim.DESK_INTRINSICS,
                         sim.DEFAULT_SENSOR_HEIGHT, out_dir=args.out)
    sim.save_world(scanned, os.path.join(args.out, "world.json"))
    print(f"dataset written to {args.out}")


def _add_build_map(sub):
    p = sub.add_parser("build-map", help="build a virtual-scan grid map")
    p.add_argument("--scans", required=True, help="directory of .bin scans")
    p.add_argument("--poses", required=True, help="pose file (3x4 per line)")
    p.add_argument("--resolution", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output .ovmg path")
    p.add_argument("--voxel", type=float, default=0.3, help="aggregation voxel size")
    p.add_argument("--every", type=int, default=1, help="use every k-th scan")
    p.add_argument("--margin", type=float, default=15.0,
                   help="grid bounds margin around the mapping trajectory")
    p.add_argument("--neighbor-radius", type=float, default=None)
    p.add_argument("--cloud-out", default=None,
                   help="also write the aggregated cloud (needed by beamend)")
    p.add_argument("--height", type=int, default=sim.DESK_INTRINSICS.height)
    p.add_argument("--width", type=int, default=sim.DESK_INTRINSICS.width)
    p.add_argument("--fov-up", type=float, default=sim.DESK_INTRINSICS.fov_up_deg)
    p.add_argument("--fov-down", type=float, default=sim.DESK_INTRINSICS.fov_down_deg)
    p.add_argument("--r-min", type=float, default=sim.DESK_INTRINSICS.r_min)
    p.add_argument("--r-max", type=float, default=sim.DESK_INTRINSICS.r_max)
    p.add_argument("--sensor-height", type=float, default=sim.DEFAULT_SENSOR_HEIGHT)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_build_map)


def cmd_build_map(args):
    intr = SensorIntrinsics(args.height, args.width, args.fov_up, args.fov_down,
                            args.r_min, args.r_max)
    files = scan_io.list_scan_files(args.scans)
    poses = scan_io.load_poses(args.poses)
    if len(files) != len(poses):
        raise SystemExit(f"{len(files)} scans but {len(poses)} poses")
    files = files[:: args.every]
    poses = poses[:: args.every]
    clouds = [scan_io.load_point_cloud(f) for f in files]
    cloud = aggregate(clouds, poses, voxel_size=args.voxel)
    xy = poses[:, :2, 3]
    bounds = (xy[:, 0].min() - args.margin, xy[:, 0].max() + args.margin,
              xy[:, 1].min() - args.margin, xy[:, 1].max() + args.margin)
    grid = build_grid(cloud, args.resolution, bounds, intr,
                      sensor_height=args.sensor_height,
                      neighbor_radius=args.neighbor_radius,
                      verbose=not args.quiet)
    save_grid(grid, args.out)
    if args.cloud_out:
        from .scan import PointCloud
        scan_io.save_point_cloud(PointCloud(cloud.points), args.cloud_out)
    print(f"map with {grid.n_occupied} occupied cells written to {args.out}")


def _load_frames(scan_dir, intr):
    frames = []
    for f in scan_io.list_scan_files(scan_dir):
        cloud = scan_io.load_point_cloud(f)
        frames.append(Frame(spherical_project(cloud, intr), cloud))
    return frames


def _add_localize(sub):
    p = sub.add_parser("localize", help="run Monte-Carlo localization")
    p.add_argument("--map", required=True, help=".ovmg grid map")
    p.add_argument("--scans", required=True)
    p.add_argument("--odometry", required=True)
    p.add_argument("--particles", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="trajectory output path")
    p.add_argument("--model", choices=MODEL_NAMES, default="overlap")
    p.add_argument("--map-cloud", default=None,
                   help=".bin aggregated cloud (required for beamend)")
    p.add_argument("--eps-r", type=float, default=1.0)
    p.add_argument("--sigma-yaw", type=float, default=5.0)
    p.set_defaults(func=cmd_localize)


def _make_model_from_args(args, grid):
    map_points = None
    if args.model == "beamend":
        if not args.map_cloud:
            raise SystemExit("--model beamend requires --map-cloud")
        map_points = scan_io.load_point_cloud(args.map_cloud).points
    return make_model(args.model, grid,
                      scorer=GeometricScorer(args.eps_r),
                      yaw=mcl.YawModelParams(args.sigma_yaw),
                      map_points=map_points)


def cmd_localize(args):
    grid = load_grid(args.map)
    frames = _load_frames(args.scans, grid.intrinsics)
    odometry = scan_io.load_odometry(args.odometry)
    if len(odometry) != len(frames):
        raise SystemExit(f"{len(frames)} scans but {len(odometry)} odometry rows")
    model = _make_model_from_args(args, grid)
    dummy_truth = np.zeros((len(frames), 3))
    run = evaluation.run_localization(grid, model, frames, odometry,
                                      dummy_truth, args.particles, args.seed)
    evaluation.write_trajectory(run, args.out)
    print(f"trajectory written to {args.out}")


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="sweep models and particle counts")
    p.add_argument("--map", required=True)
    p.add_argument("--dataset", required=True,
                   help="dataset directory (scans/, poses.txt, odometry.txt)")
    p.add_argument("--models", default="overlap",
                   help="comma-separated subset of overlap,beamend,histogram")
    p.add_argument("--particles", default="500,1000,5000")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--map-cloud", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--success-radius", type=float, default=5.0)
    p.add_argument("--check-interval", type=int, default=100)
    p.add_argument("--eps-r", type=float, default=1.0)
    p.add_argument("--sigma-yaw", type=float, default=5.0)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_evaluate)


def cmd_evaluate(args):
    grid = load_grid(args.map)
    frames = _load_frames(os.path.join(args.dataset, "scans"), grid.intrinsics)
    odometry = scan_io.load_odometry(os.path.join(args.dataset, "odometry.txt"))
    mats = scan_io.load_poses(os.path.join(args.dataset, "poses.txt"))
    truth = np.array([planar_pose(m) for m in mats])
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    particles = tuple(int(n) for n in args.particles.split(","))
    cfg = evaluation.EvalConfig(particles, args.runs,
                                args.success_radius, args.check_interval)
    map_points = None
    if "beamend" in models:
        if not args.map_cloud:
            raise SystemExit("beamend evaluation requires --map-cloud")
        map_points = scan_io.load_point_cloud(args.map_cloud).points

    def factory(name):
        return make_model(name, grid, scorer=GeometricScorer(args.eps_r),
                          yaw=mcl.YawModelParams(args.sigma_yaw),
                          map_points=map_points)

    result = evaluation.run_protocol(grid, factory, frames, odometry, truth,
                                     models, cfg, base_seed=args.seed,
                                     verbose=not args.quiet)
    evaluation.write_report(result, args.out)
    print(evaluation.format_summary(result))
    print(f"report written to {args.out}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="overlap-mcl",
        description="overlap-based Monte-Carlo localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_build_map(sub)
    _add_localize(sub)
    _add_evaluate(sub)
    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
