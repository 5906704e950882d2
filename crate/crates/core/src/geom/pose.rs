use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::quat::JplQuaternion;
use super::so3::{so3_exp, so3_log, Rot3};
use crate::error::{Error, Result};

/// Time-stamped pose. `orientation` maps global into local coordinates and
/// `position` is the local origin expressed in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub orientation: JplQuaternion,
    pub position: Vector3<f64>,
    pub stamp: f64,
}

impl Pose {
    pub fn new(orientation: JplQuaternion, position: Vector3<f64>, stamp: f64) -> Self {
        Self { orientation, position, stamp }
    }

    pub fn identity(stamp: f64) -> Self {
        Self::new(JplQuaternion::identity(), Vector3::zeros(), stamp)
    }

    pub fn rot(&self) -> Rot3 {
        self.orientation.to_rot()
    }

    /// Maps a point from the local frame into the global frame.
    pub fn local_to_global(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot().transpose() * p + self.position
    }

    pub fn global_to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot() * (p - self.position)
    }
}

/// Geodesic interpolation of orientation and linear interpolation of
/// position between two stamped poses. No extrapolation.
pub fn pose_interpolate(p0: &Pose, p1: &Pose, t: f64) -> Result<Pose> {
    if !(p0.stamp < p1.stamp) {
        return Err(Error::Precondition(format!(
            "interpolation needs increasing stamps, got {} and {}",
            p0.stamp, p1.stamp
        )));
    }
    if !(t >= p0.stamp && t <= p1.stamp) {
        return Err(Error::OutOfRange { t, start: p0.stamp, end: p1.stamp });
    }
    if t == p0.stamp {
        return Ok(*p0);
    }
    if t == p1.stamp {
        return Ok(*p1);
    }
    let lambda = (t - p0.stamp) / (p1.stamp - p0.stamp);
    let r0 = p0.rot();
    let r1 = p1.rot();
    let delta = so3_log(&(r0.transpose() * r1));
    let r = r0 * so3_exp(&(lambda * delta));
    let position = p0.position + lambda * (p1.position - p0.position);
    Ok(Pose::new(JplQuaternion::from_rot(&r), position, t))
}
