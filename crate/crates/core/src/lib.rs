//! Sliding-window LiDAR-inertial-camera odometry built around plane features.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] – JPL quaternions, SO(3) maps and pose interpolation.
//! * [`state`] – the filter state, its error-state layout and covariance
//!   bookkeeping (clones, landmarks, re-anchoring, marginalization).
//! * [`imu`] – error-state IMU propagation and the pose buffer.
//! * [`lidar`] – deskewing, planar point extraction, sliding-window plane
//!   tracking with the normal-consistency gate, and plane initialization.
//! * [`update`] – point-to-plane and visual measurement models, nullspace
//!   projection and EKF updates.
//! * [`observability`] – numerical observability matrices and certificates
//!   for the analytic unobservable directions.
//! * [`estimator`] – the sliding-window pipeline tying the modules together.
//! * [`trajectory`] – analytic trajectories with exact rates.
//! * [`sim`] – a virtual room, sensor synthesis, the Monte-Carlo runner
//!   and its metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geom;
pub mod state;
pub mod imu;
pub mod lidar;
pub mod update;
pub mod trajectory;
pub mod observability;
pub mod estimator;
pub mod sim;
#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
