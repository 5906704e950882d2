//! LiDAR front-end: motion compensation, planar point extraction, plane
//! tracking with the normal-consistency gate, and plane initialization.

mod deskew;
mod extract;
mod gate;
mod init;
mod scan;
mod tracker;

pub use deskew::{sensor_pose, undistort_scan, Undistorted};
pub use extract::{extract_planar_points, ring_curvature, ExtractConfig};
pub use gate::{normal_residual, triangle_normal, GateOutcome, NormalGate, NormalResidual, Triangle};
pub use init::{init_plane, FrameObservation, PlaneFit};
pub use scan::{LidarPoint, LidarScan, PointIndex};
pub use tracker::{relative_motion, PlaneTrack, PlaneTracker, RelativeMotion, StepReport, TrackStatus, TrackerConfig};
