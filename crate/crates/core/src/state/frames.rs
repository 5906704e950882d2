//! Sensor frames built from clones and calibration, with their first-order
//! sensitivity to the error state.
//!
//! A sensor frame has rotation `C = R_si · R_eff` (global to sensor) and
//! origin `ℓ` in the global frame, where `R_eff`, `p_eff` are the clone
//! pose shifted by `Δ = td - td_ref` along the recorded angular rate and
//! velocity. Its perturbation is written `C = (I - [α]x) Ĉ`, `ℓ = ℓ̂ + β`
//! with `α`, `β` linear in the error state.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};

use super::types::{CalibState, Sensor};
use super::{calib_index, FilterState};
use crate::error::{Error, Result};
use crate::geom::{skew, so3_exp, JplQuaternion, Rot3};

/// Linear map from the error state to the frame perturbation `(α, β)`.
#[derive(Debug, Clone, Copy)]
pub struct FrameMap {
    pub pose_theta: usize,
    pub pose_p: usize,
    pub calib: usize,
    alpha_theta: Matrix3<f64>,
    alpha_td: Vector3<f64>,
    beta_theta: Matrix3<f64>,
    beta_theta_c: Matrix3<f64>,
    beta_p_c: Matrix3<f64>,
    beta_td: Vector3<f64>,
}

impl FrameMap {
    /// Adds `dα·∂α/∂x + dβ·∂β/∂x` into rows `row0..row0+R` of `out`.
    pub fn add_jacobian<const R: usize>(
        &self,
        out: &mut DMatrix<f64>,
        row0: usize,
        d_alpha: &SMatrix<f64, R, 3>,
        d_beta: &SMatrix<f64, R, 3>,
    ) {
        let add = |out: &mut DMatrix<f64>, col: usize, m: SMatrix<f64, R, 3>| {
            let mut v = out.view_mut((row0, col), (R, 3));
            v += m;
        };
        add(out, self.pose_theta, d_alpha * self.alpha_theta + d_beta * self.beta_theta);
        add(out, self.pose_p, *d_beta);
        add(out, self.calib, d_alpha + d_beta * self.beta_theta_c);
        add(out, self.calib + 3, d_beta * self.beta_p_c);
        let td = d_alpha * self.alpha_td + d_beta * self.beta_td;
        let mut v = out.view_mut((row0, self.calib + 6), (R, 1));
        v += td;
    }
}

/// Pose of a sensor frame plus its error-state sensitivity.
#[derive(Debug, Clone, Copy)]
pub struct SensorFrame {
    /// Global-to-sensor rotation.
    pub rot: Rot3,
    /// Sensor origin in the global frame.
    pub pos: Vector3<f64>,
    pub map: FrameMap,
}

impl SensorFrame {
    /// Builds the frame of a sensor rigidly attached to an IMU pose.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        q_ig: &JplQuaternion,
        p_gi: &Vector3<f64>,
        omega: &Vector3<f64>,
        v_gi: &Vector3<f64>,
        delta: f64,
        calib: &CalibState,
        pose_theta: usize,
        pose_p: usize,
        calib_offset: usize,
    ) -> Self {
        let e = so3_exp(&(omega * delta)).transpose();
        let r_eff = e * q_ig.to_rot();
        let p_eff = p_gi + v_gi * delta;
        let r_c = calib.q_si.to_rot();
        let p_c = calib.p_si;
        let s = r_c.transpose() * p_c;
        let rot = r_c * r_eff;
        let pos = p_eff - r_eff.transpose() * s;
        let rt_s = r_eff.transpose() * skew(&s);
        let map = FrameMap {
            pose_theta,
            pose_p,
            calib: calib_offset,
            alpha_theta: r_c * e,
            alpha_td: r_c * omega,
            beta_theta: rt_s * e,
            beta_theta_c: r_eff.transpose() * r_c.transpose() * skew(&p_c),
            beta_p_c: -(r_eff.transpose() * r_c.transpose()),
            beta_td: v_gi + rt_s * omega,
        };
        Self { rot, pos, map }
    }

    /// Expresses a point given in this frame in the global frame.
    pub fn to_global(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rot.transpose() * q + self.pos
    }

    pub fn from_global(&self, g: &Vector3<f64>) -> Vector3<f64> {
        self.rot * (g - self.pos)
    }
}

/// Frame of the given sensor at clone `clone_id`.
pub fn clone_frame(state: &FilterState, sensor: Sensor, clone_id: u64) -> Result<SensorFrame> {
    let window = state.window(sensor);
    let c = window.get(clone_id).ok_or(Error::UnknownId { kind: "clone", id: clone_id })?;
    let off = state.clone_offset(sensor, clone_id).expect("clone present in window");
    let calib = state.calib(sensor);
    Ok(SensorFrame::from_parts(
        &c.q_ig,
        &c.p_gi,
        &c.omega,
        &c.v_gi,
        calib.td - c.td_ref,
        calib,
        off,
        off + 3,
        calib_index(sensor),
    ))
}

/// A point `q` of frame `x` expressed in frame `a`, with the partials of the
/// result with respect to `(α_a, β_a, α_x, β_x)`.
pub struct Transported {
    pub w: Vector3<f64>,
    pub d_alpha_a: Matrix3<f64>,
    pub d_beta_a: Matrix3<f64>,
    pub d_alpha_x: Matrix3<f64>,
    pub d_beta_x: Matrix3<f64>,
}

pub fn transport_point(anchor: &SensorFrame, frame: &SensorFrame, q: &Vector3<f64>) -> Transported {
    let g = frame.to_global(q);
    let w = anchor.from_global(&g);
    let c_ax = anchor.rot * frame.rot.transpose();
    Transported {
        w,
        d_alpha_a: skew(&w),
        d_beta_a: -anchor.rot,
        d_alpha_x: -c_ax * skew(q),
        d_beta_x: anchor.rot,
    }
}

/// Relative transform mapping frame `x` coordinates into frame `a`.
pub fn relative_transform(anchor: &SensorFrame, frame: &SensorFrame) -> (Rot3, Vector3<f64>) {
    let r = anchor.rot * frame.rot.transpose();
    let t = anchor.rot * (frame.pos - anchor.pos);
    (r, t)
}
