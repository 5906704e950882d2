//! Simulation harness: a virtual room, analytic trajectories, IMU, LiDAR and
//! camera synthesis with the true calibration, and a Monte-Carlo runner
//! that drives the [`crate::estimator::Estimator`] and scores it.
//!
//! Random draws of a run come from independent streams keyed by the seed, so
//! runs of different modes with the same seed see the same measurements.

mod config;
mod metrics;
mod runner;
mod sensors;
mod trajgen;
mod world;

pub use config::{Mode, SimConfig, TrajectoryKind};
pub use metrics::{align, ate, compute_metrics, nees, orientation_error, Alignment, EvalSample, RunMetrics};
pub use runner::{
    aggregate, estimator_config, imu_noise, run_monte_carlo, run_seed, run_single, CalibRecord, MeanMetrics,
    MonteCarloReport, RunOutput, RunSummary, DIVERGENCE_M, MIN_PIXEL_SIGMA, MIN_POINT_SIGMA,
};
pub use sensors::{imu_pose, ray_direction, sim_camera, sim_imu, sim_lidar, CameraFrame, CameraModel, ImuStream, LidarModel, Rig};
pub use trajgen::gen_trajectory;
pub use world::{Patch, WorldModel};
