//! JSON snapshot of the filter state. Field names follow the usual symbols:
//! `x_I`, `x_calib_C`, `x_calib_L`, `x_C`, `x_L`, `x_f`, `x_pi`.
#![allow(non_snake_case)]

use serde::{Deserialize, Serialize};

use super::FilterState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuSnapshot {
    pub q_IG: [f64; 4],
    pub b_g: [f64; 3],
    pub v_GI: [f64; 3],
    pub b_a: [f64; 3],
    pub p_GI: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSnapshot {
    /// Rotation from IMU to sensor frame, JPL `[x, y, z, w]`.
    pub q_SI: [f64; 4],
    /// IMU origin expressed in the sensor frame.
    pub p_SI: [f64; 3],
    pub t_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneSnapshot {
    pub id: u64,
    pub stamp: f64,
    pub q_IG: [f64; 4],
    pub p_GI: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSnapshot {
    pub id: u64,
    pub p_Gf: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSnapshot {
    pub id: u64,
    pub anchor_id: u64,
    pub p_Api: [f64; 3],
}

/// Serializable view of a [`FilterState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub time: f64,
    pub dim: usize,
    pub x_I: ImuSnapshot,
    pub x_calib_C: CalibSnapshot,
    pub x_calib_L: CalibSnapshot,
    pub x_C: Vec<CloneSnapshot>,
    pub x_L: Vec<CloneSnapshot>,
    pub x_f: Vec<PointSnapshot>,
    pub x_pi: Vec<PlaneSnapshot>,
    /// Row-major covariance, present when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

fn a3(v: &nalgebra::Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl FilterState {
    pub fn snapshot(&self, with_covariance: bool) -> StateSnapshot {
        let calib = |c: &super::CalibState| CalibSnapshot { q_SI: c.q_si.as_array(), p_SI: a3(&c.p_si), t_d: c.td };
        let clones = |w: &super::CloneWindow| {
            w.clones
                .iter()
                .map(|c| CloneSnapshot { id: c.id, stamp: c.stamp, q_IG: c.q_ig.as_array(), p_GI: a3(&c.p_gi) })
                .collect()
        };
        StateSnapshot {
            time: self.time,
            dim: self.dim(),
            x_I: ImuSnapshot {
                q_IG: self.imu.q_ig.as_array(),
                b_g: a3(&self.imu.bg),
                v_GI: a3(&self.imu.v_gi),
                b_a: a3(&self.imu.ba),
                p_GI: a3(&self.imu.p_gi),
            },
            x_calib_C: calib(&self.calib_cam),
            x_calib_L: calib(&self.calib_lidar),
            x_C: clones(&self.cam_clones),
            x_L: clones(&self.lidar_clones),
            x_f: self.points.iter().map(|p| PointSnapshot { id: p.id, p_Gf: a3(&p.p_gf) }).collect(),
            x_pi: self
                .planes
                .iter()
                .map(|p| PlaneSnapshot { id: p.id, anchor_id: p.plane.anchor_id, p_Api: a3(&p.plane.cp) })
                .collect(),
            covariance: with_covariance
                .then(|| (0..self.cov.nrows()).map(|i| self.cov.row(i).iter().copied().collect()).collect()),
        }
    }
}
