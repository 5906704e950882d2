use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{so3_log, Pose, Rot3};

/// One evaluated instant: true and estimated IMU pose with the marginal
/// covariance of the orientation and position errors, in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSample {
    pub stamp: f64,
    pub truth: Pose,
    pub estimate: Pose,
    pub cov: Matrix6<f64>,
}

/// Gauge used before computing the trajectory error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Rotation about gravity and translation, the unobservable directions.
    YawPosition,
    /// Rotation about the global z axis only.
    YawOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ate_ori_deg: f64,
    pub ate_pos_m: f64,
    pub nees_ori: f64,
    pub nees_pos: f64,
    /// Error of the estimated start-to-end displacement.
    pub drift_m: [f64; 3],
    pub samples: usize,
    /// Steps left out of the NEES because their covariance was singular.
    pub singular_steps: usize,
}

/// `δθ` with `R_true = exp(-[δθ]x) R_est`.
pub fn orientation_error(truth: &Rot3, estimate: &Rot3) -> Vector3<f64> {
    -so3_log(&(truth * estimate.transpose()))
}

fn rot_z(yaw: f64) -> Rot3 {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation `R_z` and translation `t` minimizing `Σ |p_true - (R_z p_est + t)|²`.
pub fn align(samples: &[EvalSample], alignment: Alignment) -> (Rot3, Vector3<f64>) {
    let n = samples.len().max(1) as f64;
    let (mt, me) = match alignment {
        Alignment::YawPosition => (
            samples.iter().map(|s| s.truth.position).sum::<Vector3<f64>>() / n,
            samples.iter().map(|s| s.estimate.position).sum::<Vector3<f64>>() / n,
        ),
        Alignment::YawOnly => (Vector3::zeros(), Vector3::zeros()),
    };
    let (mut sc, mut ss) = (0.0, 0.0);
    for s in samples {
        let t = s.truth.position - mt;
        let e = s.estimate.position - me;
        sc += t.x * e.x + t.y * e.y;
        ss += t.y * e.x - t.x * e.y;
    }
    let rz = rot_z(ss.atan2(sc));
    (rz, mt - rz * me)
}

/// Orientation RMS in degrees and position RMSE in meters after alignment.
pub fn ate(samples: &[EvalSample], alignment: Alignment) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let (rz, t) = align(samples, alignment);
    let n = samples.len() as f64;
    let (mut so, mut sp) = (0.0, 0.0);
    for s in samples {
        // a global frame rotated by R_z maps R to R R_zᵀ
        let est_rot = s.estimate.rot() * rz.transpose();
        so += orientation_error(&s.truth.rot(), &est_rot).norm_squared();
        sp += (s.truth.position - (rz * s.estimate.position + t)).norm_squared();
    }
    ((so / n).sqrt().to_degrees(), (sp / n).sqrt())
}

/// Mean orientation and position NEES over the steps with a positive
/// definite covariance block, and the number of skipped steps.
pub fn nees(samples: &[EvalSample]) -> (f64, f64, usize) {
    let (mut so, mut sp, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    for s in samples {
        let eo = orientation_error(&s.truth.rot(), &s.estimate.rot());
        let ep = s.truth.position - s.estimate.position;
        let po: Matrix3<f64> = s.cov.fixed_view::<3, 3>(0, 0).into_owned();
        let pp: Matrix3<f64> = s.cov.fixed_view::<3, 3>(3, 3).into_owned();
        match (po.cholesky(), pp.cholesky()) {
            (Some(co), Some(cp)) => {
                so += eo.dot(&co.solve(&eo));
                sp += ep.dot(&cp.solve(&ep));
                used += 1;
            }
            _ => skipped += 1,
        }
    }
    let d = used.max(1) as f64;
    (so / d, sp / d, skipped)
}

pub fn compute_metrics(samples: &[EvalSample], alignment: Alignment) -> Result<RunMetrics> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Precondition("no samples to evaluate".into())),
    };
    if samples.windows(2).any(|w| w[1].stamp < w[0].stamp) {
        return Err(Error::Precondition("evaluation samples must be time ordered".into()));
    }
    let (ate_ori_deg, ate_pos_m) = ate(samples, alignment);
    let (nees_ori, nees_pos, singular_steps) = nees(samples);
    let drift = (last.estimate.position - first.estimate.position) - (last.truth.position - first.truth.position);
    Ok(RunMetrics {
        ate_ori_deg,
        ate_pos_m,
        nees_ori,
        nees_pos,
        drift_m: [drift.x, drift.y, drift.z],
        samples: samples.len(),
        singular_steps,
    })
}
