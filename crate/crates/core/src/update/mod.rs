//! EKF measurement updates: LiDAR plane and camera point features, each in
//! MSCKF (landmark projected out) and SLAM (landmark in the state) form.

mod diag;
mod ekf;
mod linalg;
mod plane;
mod visual;

pub use diag::{DiagnosticsLog, UpdateKind, UpdateRecord};
pub use ekf::{chi2_gate, chi2_threshold, compress, ekf_update, gated_update, kalman_correction, nis, project_out, GateDecision, Noise, ProjectedBlock};
pub use linalg::{column_basis, householder_reduce, left_nullspace_project};
pub use plane::{
    anchor_observations, build_plane_block, estimate_track_plane, msckf_nullspace_project, point_to_plane_residual,
    promote_plane, slam_plane_system, slam_plane_update, transform_plane, PlaneResidualBlock, TransformedPlane,
};
pub use visual::{
    build_point_block, point_nullspace_project, project, promote_point, slam_point_system, slam_point_update,
    triangulate, visual_msckf_update, BearingMeasurement, FeatureOutcome, PointResidualBlock,
};

#[cfg(test)]
mod tests;
