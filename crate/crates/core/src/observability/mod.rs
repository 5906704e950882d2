//! Observability of the LiDAR-inertial subsystem with online calibration:
//! the stacked matrix `M = [H_k Φ_(k,1)]` over analytic trajectories, its
//! numerical nullspace, and certificates for the analytic unobservable
//! directions under degenerate motions.

pub mod directions;
pub(crate) mod suite;
mod system;

pub use suite::{
    case_system, find_case, format_table, gravity, lab_calibration, run_case, run_degenerate_suite, Case, CaseSystem, DegenerateMotion,
    DirectionCheck, NullspaceCertificate, PlaneConfig, CASES, NULLSPACE_TOL, OBSERVABLE_MIN, UNOBSERVABLE_TOL,
};
pub use system::{
    build_observability_matrix, certify_direction, imu_transition, numeric_nullspace, reduced_dim, singular_values,
    GlobalPlane, ObservabilityStep, ObservabilitySystem, CALIB, PLANES, TD,
};
