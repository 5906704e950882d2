use nalgebra::{DMatrix, DVector, Matrix1x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::{error_dynamics, Mat15};
use crate::state::{calib_idx, imu_idx, CalibState, SensorFrame, CALIB_DIM, IMU_DIM};
use crate::trajectory::Trajectory;

/// Offset of the LiDAR calibration block in the reduced state.
pub const CALIB: usize = IMU_DIM;
/// Offset of the first plane in the reduced state.
pub const PLANES: usize = IMU_DIM + CALIB_DIM;
pub const TD: usize = CALIB + calib_idx::TD;

/// Upper bound on the integration step of the transition matrix.
const MAX_STEP: f64 = 1e-3;
/// Points sampled on each plane per measurement step.
const POINT_OFFSETS: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (-1.0, -0.5), (0.5, -1.0)];

/// A plane `nᵀx = d` in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalPlane {
    pub normal: Vector3<f64>,
    pub distance: f64,
}

impl GlobalPlane {
    pub fn new(normal: Vector3<f64>, distance: f64) -> Self {
        let n = normal.norm();
        Self { normal: normal / n, distance: distance / n }
    }

    pub fn closest_point(&self) -> Vector3<f64> {
        self.normal * self.distance
    }

    /// Orthonormal `[n⊥₁ n⊥₂ n]`.
    pub fn basis(&self) -> Matrix3<f64> {
        let n = self.normal;
        let a = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = n.cross(&a).normalize();
        let v = n.cross(&u);
        Matrix3::from_columns(&[u, v, n])
    }
}

/// One block row `H_k Φ_(k,1)` of the observability matrix.
#[derive(Debug, Clone)]
pub struct ObservabilityStep {
    pub time: f64,
    pub h: DMatrix<f64>,
    pub phi: DMatrix<f64>,
}

/// Reduced state `[x_I | x_calib_L | ^G p_π,1 .. ^G p_π,P]` with one block per step.
#[derive(Debug, Clone)]
pub struct ObservabilitySystem {
    pub dim: usize,
    pub steps: Vec<ObservabilityStep>,
}

impl ObservabilitySystem {
    /// Stacked `M`.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.matrix_upto(self.steps.len())
    }

    /// `M` over the first `k` steps.
    pub fn matrix_upto(&self, k: usize) -> DMatrix<f64> {
        let rows: usize = self.steps[..k].iter().map(|s| s.h.nrows()).sum();
        let mut m = DMatrix::zeros(rows, self.dim);
        let mut r = 0;
        for s in &self.steps[..k] {
            let block = &s.h * &s.phi;
            m.rows_mut(r, block.nrows()).copy_from(&block);
            r += block.nrows();
        }
        m
    }
}

pub fn reduced_dim(n_planes: usize) -> usize {
    PLANES + 3 * n_planes
}

/// Measurement Jacobian of point-to-plane distances at one instant,
/// evaluated at the true state.
fn measurement_jacobian(traj: &Trajectory, t: f64, calib: &CalibState, planes: &[GlobalPlane]) -> DMatrix<f64> {
    let k = traj.at(t);
    let q = crate::geom::JplQuaternion::from_rot(&k.rot);
    let frame = SensorFrame::from_parts(&q, &k.pos, &k.omega, &k.vel, 0.0, calib, imu_idx::THETA, imu_idx::P, CALIB);
    let dim = reduced_dim(planes.len());
    let mut h = DMatrix::zeros(POINT_OFFSETS.len() * planes.len(), dim);
    let mut row = 0;
    for (j, plane) in planes.iter().enumerate() {
        let basis = plane.basis();
        let (u, v, n) = (basis.column(0).into_owned(), basis.column(1).into_owned(), plane.normal);
        // foot of the perpendicular from the sensor
        let foot = frame.pos - n * (n.dot(&frame.pos) - plane.distance);
        let proj = (Matrix3::identity() - n * n.transpose()) / plane.distance;
        for (a, b) in POINT_OFFSETS {
            let g = foot + u * a + v * b;
            let q_l = frame.from_global(&g);
            let nt = n.transpose();
            let d_alpha: Matrix1x3<f64> = -(nt * frame.rot.transpose() * crate::geom::skew(&q_l));
            frame.map.add_jacobian::<1>(&mut h, row, &d_alpha, &nt);
            let hp: Matrix1x3<f64> = g.transpose() * proj - nt;
            h.view_mut((row, PLANES + 3 * j), (1, 3)).copy_from(&hp);
            row += 1;
        }
    }
    h
}

/// IMU error-state transition from `t0` to `t1` along the true trajectory.
pub fn imu_transition(traj: &Trajectory, t0: f64, t1: f64, g: &Vector3<f64>) -> Mat15 {
    let n = ((t1 - t0) / MAX_STEP).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let f = |t: f64| {
        let k = traj.at(t);
        error_dynamics(&k.rot, &k.omega, &k.specific_force(g))
    };
    let mut phi = Mat15::identity();
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let (fa, fm, fb) = (f(t), f(t + 0.5 * h), f(t + h));
        let k1 = fa * phi;
        let k2 = fm * (phi + k1 * (0.5 * h));
        let k3 = fm * (phi + k2 * (0.5 * h));
        let k4 = fb * (phi + k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    phi
}

/// Builds `M` over the measurement `times` (the first one is the reference
/// time of `Φ`).
pub fn build_observability_matrix(
    traj: &Trajectory,
    calib: &CalibState,
    planes: &[GlobalPlane],
    times: &[f64],
    g: &Vector3<f64>,
) -> Result<ObservabilitySystem> {
    if planes.is_empty() || times.is_empty() {
        return Err(Error::Precondition("need at least one plane and one step".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotone { index: times.windows(2).position(|w| w[1] <= w[0]).unwrap() + 1 });
    }
    let dim = reduced_dim(planes.len());
    let mut phi_imu = Mat15::identity();
    let mut steps = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            phi_imu = imu_transition(traj, times[i - 1], t, g) * phi_imu;
        }
        let mut phi = DMatrix::identity(dim, dim);
        phi.view_mut((0, 0), (IMU_DIM, IMU_DIM)).copy_from(&phi_imu);
        steps.push(ObservabilityStep { time: t, h: measurement_jacobian(traj, t, calib, planes), phi });
    }
    Ok(ObservabilitySystem { dim, steps })
}

/// Right singular vectors of `m` whose singular values fall below
/// `tol · σ_max`.
pub fn numeric_nullspace(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    // pad so the SVD always yields n right singular vectors
    let mut padded = DMatrix::zeros(m.nrows().max(n), n);
    padded.rows_mut(0, m.nrows()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let idx: Vec<usize> = (0..n).filter(|&i| smax == 0.0 || svd.singular_values[i] < tol * smax).collect();
    DMatrix::from_fn(n, idx.len(), |r, c| v_t[(idx[c], r)])
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `‖M N‖ / (‖M‖₂ ‖N‖)` per column.
pub fn certify_direction(m: &DMatrix<f64>, n: &DVector<f64>) -> Result<f64> {
    let nn = n.norm();
    if nn == 0.0 || !nn.is_finite() {
        return Err(Error::Precondition("direction must be a nonzero finite vector".into()));
    }
    let smax = singular_values(m).first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0.0);
    }
    Ok((m * n).norm() / (smax * nn))
}
