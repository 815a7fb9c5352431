"""Monte-Carlo localization for 3D LiDAR with an overlap-based observation
model over virtual-scan grid maps, plus beam-end and histogram baselines,
a synthetic-world simulator, and an evaluation harness."""

from .scan import (INVALID_RANGE, PointCloud, RangeImage, SensorIntrinsics,
                   estimate_normals, spherical_project, unproject)
from .overlap import (GeometricScorer, ObservationScorer, OverlapEstimate,
                      estimate, ground_truth_overlap, shift_score)
from .grid import (AggregatedCloud, VirtualScanGrid, aggregate, build_grid,
                   load_grid, render_virtual_scan, save_grid,
                   MapFileError, InvalidMagicError, UnsupportedVersionError,
                   TruncatedFileError)
from .mcl import (FilterParams, MotionNoise, OdometryControl, Particle,
                  ParticleSet, PoseEstimate, YawModelParams,
                  effective_sample_size, estimate_pose, initialize_global,
                  predict, resample_if_needed, step, update_weights)
from .baselines import (LikelihoodField, RangeHistogram, beam_end_weight,
                        beam_end_log_weight, build_likelihood_field,
                        histogram_weight, range_histogram, wasserstein_1d)
from .sim import (Box, TrajectorySpec, WorldModel, DESK_INTRINSICS,
                  default_trajectory, generate_dataset, make_world,
                  perturb_world, simulate_scan)
from .models import (BeamEndModel, Frame, HistogramModel, OverlapYawModel,
                     make_model)
from .evaluation import (EvalConfig, RunResult, evaluation_count_report,
                         judge_success, rmse_metrics, run_localization,
                         success_rate)

__version__ = "0.1.0"
