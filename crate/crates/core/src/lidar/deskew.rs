use crate::error::Result;
use crate::geom::{JplQuaternion, Pose};
use crate::imu::PoseBuffer;
use crate::state::CalibState;

use super::scan::LidarScan;

/// Sensor pose rigidly attached to an IMU pose.
pub fn sensor_pose(imu: &Pose, calib: &CalibState) -> Pose {
    let r_c = calib.q_si.to_rot();
    let rot = r_c * imu.rot();
    let pos = imu.position - imu.rot().transpose() * (r_c.transpose() * calib.p_si);
    Pose::new(JplQuaternion::from_rot(&rot), pos, imu.stamp)
}

#[derive(Debug, Clone)]
pub struct Undistorted {
    pub scan: LidarScan,
    /// Points whose stamp fell outside the pose buffer.
    pub dropped: usize,
}

/// Re-expresses every point in the LiDAR frame at `sweep_start`.
///
/// Buffer stamps are IMU time; a point stamped `t` by the sensor was taken
/// at IMU time `t + td`.
pub fn undistort_scan(scan: &LidarScan, buffer: &PoseBuffer, calib: &CalibState) -> Result<Undistorted> {
    let reference = sensor_pose(&buffer.query(scan.sweep_start + calib.td)?, calib);
    let r_ref = reference.rot();
    let mut out = LidarScan::empty(scan.rings.len(), scan.sweep_start, scan.sweep_end);
    let mut dropped = 0;
    for (r, ring) in scan.rings.iter().enumerate() {
        for p in ring {
            let imu = match buffer.query(p.stamp + calib.td) {
                Ok(pose) => pose,
                Err(_) => {
                    dropped += 1;
                    continue;
                }
            };
            let at = sensor_pose(&imu, calib);
            let g = at.local_to_global(&p.xyz);
            let mut q = *p;
            q.xyz = r_ref * (g - reference.position);
            out.rings[r].push(q);
        }
    }
    Ok(Undistorted { scan: out, dropped })
}
