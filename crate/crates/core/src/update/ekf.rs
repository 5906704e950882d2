use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::linalg::{householder_reduce, left_nullspace_project};
use crate::error::{Error, Result};
use crate::state::{symmetrize, FilterState};

/// Measurement noise of a stacked update.
#[derive(Debug, Clone)]
pub enum Noise {
    /// `σ² I`.
    Isotropic(f64),
    Full(DMatrix<f64>),
}

impl Noise {
    fn matrix(&self, m: usize) -> DMatrix<f64> {
        match self {
            Noise::Isotropic(v) => DMatrix::identity(m, m) * *v,
            Noise::Full(r) => r.clone(),
        }
    }
}

/// `χ²(dof)` quantile at `confidence`.
pub fn chi2_threshold(dof: usize, confidence: f64) -> f64 {
    if dof == 0 {
        return 0.0;
    }
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(confidence)
}

/// Normalized innovation squared `rᵀ (H P Hᵀ + R)⁻¹ r`.
pub fn nis(state: &FilterState, r: &DVector<f64>, h: &DMatrix<f64>, noise: &Noise) -> Result<f64> {
    let s = h * &state.cov * h.transpose() + noise.matrix(r.len());
    let chol = symmetrize(s).cholesky().ok_or_else(|| Error::Singular("innovation covariance".into()))?;
    Ok(r.dot(&chol.solve(r)))
}

/// Outcome of a gated update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub nis: f64,
    pub dof: usize,
    pub threshold: f64,
    pub accepted: bool,
}

pub fn chi2_gate(state: &FilterState, r: &DVector<f64>, h: &DMatrix<f64>, noise: &Noise, confidence: f64) -> Result<GateDecision> {
    let value = nis(state, r, h, noise)?;
    let threshold = chi2_threshold(r.len(), confidence);
    Ok(GateDecision { nis: value, dof: r.len(), threshold, accepted: value < threshold })
}

/// Replaces a tall isotropic system by an equivalent square one via QR.
pub fn compress(r: &DVector<f64>, h: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (m, n) = h.shape();
    if m <= n {
        return (r.clone(), h.clone());
    }
    let mut work = DMatrix::zeros(m, n + 1);
    work.columns_mut(0, n).copy_from(h);
    work.set_column(n, r);
    householder_reduce(&mut work, n);
    // rows below n carry no state information and are dropped
    (work.view((0, n), (n, 1)).column(0).into_owned(), work.view((0, 0), (n, n)).into_owned())
}

/// Correction `δx = K r` and Joseph-form posterior covariance for prior
/// covariance `cov`.
pub fn kalman_correction(
    cov: &DMatrix<f64>,
    r: &DVector<f64>,
    h: &DMatrix<f64>,
    noise: &Noise,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = cov.nrows();
    let rm = noise.matrix(r.len());
    let ph = cov * h.transpose();
    let s = symmetrize(h * &ph + &rm);
    let chol = s.cholesky().ok_or_else(|| Error::Singular("innovation covariance not positive definite".into()))?;
    // K = P Hᵀ S⁻¹
    let k = chol.solve(&ph.transpose()).transpose();
    let dx = &k * r;
    let mut ikh = DMatrix::identity(n, n);
    ikh -= &k * h;
    let post = &ikh * cov * ikh.transpose() + &k * rm * k.transpose();
    Ok((dx, symmetrize(post)))
}

/// EKF update with Joseph-form covariance. Isotropic systems taller than
/// the state are compressed first. On a singular innovation covariance the
/// state is left untouched.
pub fn ekf_update(state: &mut FilterState, r: &DVector<f64>, h: &DMatrix<f64>, noise: &Noise) -> Result<()> {
    let n = state.dim();
    if h.ncols() != n || h.nrows() != r.len() {
        return Err(Error::Precondition(format!(
            "update is {}x{} with {} residuals, state has dimension {n}",
            h.nrows(),
            h.ncols(),
            r.len()
        )));
    }
    if r.is_empty() {
        return Ok(());
    }
    let (dx, cov) = match noise {
        Noise::Isotropic(_) if h.nrows() > n => {
            let (rc, hc) = compress(r, h);
            kalman_correction(&state.cov, &rc, &hc, noise)?
        }
        _ => kalman_correction(&state.cov, r, h, noise)?,
    };
    state.cov = cov;
    state.apply_correction(&dx);
    Ok(())
}

/// A measurement system with a landmark error projected out.
#[derive(Debug, Clone)]
pub struct ProjectedBlock {
    pub r: DVector<f64>,
    pub h_x: DMatrix<f64>,
    pub sigma: f64,
    /// Rank of the landmark Jacobian removed by the projection.
    pub rank: usize,
}

/// Projects `r = H_x x̃ + H_f f̃ + n` onto the left nullspace of `H_f`.
pub fn project_out(h_f: &DMatrix<f64>, h_x: &DMatrix<f64>, r: &DVector<f64>, sigma: f64, rel_tol: f64) -> ProjectedBlock {
    let (m, n) = h_x.shape();
    let mut rhs = DMatrix::zeros(m, n + 1);
    rhs.columns_mut(0, n).copy_from(h_x);
    rhs.set_column(n, r);
    let out = left_nullspace_project(h_f, &rhs, rel_tol);
    ProjectedBlock { r: out.column(n).into_owned(), h_x: out.columns(0, n).into_owned(), sigma, rank: m - out.nrows() }
}

/// χ²-gated EKF update with isotropic noise `sigma²`.
pub fn gated_update(
    state: &mut FilterState,
    r: &DVector<f64>,
    h: &DMatrix<f64>,
    sigma: f64,
    confidence: f64,
) -> Result<GateDecision> {
    let noise = Noise::Isotropic(sigma * sigma);
    let gate = chi2_gate(state, r, h, &noise, confidence)?;
    if gate.accepted {
        ekf_update(state, r, h, &noise)?;
    }
    Ok(gate)
}

/// Row-reduced form of `r = H_x x̃ + H_f f̃ + n` used to initialize a
/// landmark: the top three rows determine `f̃`, the rest are free of it.
pub(crate) struct LandmarkSplit {
    pub h_f: nalgebra::Matrix3<f64>,
    pub h_x1: DMatrix<f64>,
    pub r1: nalgebra::Vector3<f64>,
    pub h_x2: DMatrix<f64>,
    pub r2: DVector<f64>,
}

pub(crate) fn split_landmark(h_f: &DMatrix<f64>, h_x: &DMatrix<f64>, r: &DVector<f64>, rel_tol: f64) -> Result<LandmarkSplit> {
    let (m, n) = h_x.shape();
    if m <= 3 {
        return Err(Error::Precondition(format!("landmark initialization needs more than 3 rows, got {m}")));
    }
    let mut work = DMatrix::zeros(m, 3 + n + 1);
    work.columns_mut(0, 3).copy_from(h_f);
    work.columns_mut(3, n).copy_from(h_x);
    work.set_column(3 + n, r);
    householder_reduce(&mut work, 3);
    let top = work.fixed_view::<3, 3>(0, 0).into_owned();
    if top.diagonal().abs().min() <= rel_tol * h_f.norm() {
        return Err(Error::Singular("landmark not constrained by its observations".into()));
    }
    Ok(LandmarkSplit {
        h_f: top,
        h_x1: work.view((0, 3), (3, n)).into_owned(),
        r1: work.fixed_view::<3, 1>(0, 3 + n).into_owned(),
        h_x2: work.view((3, 3), (m - 3, n)).into_owned(),
        r2: work.view((3, 3 + n), (m - 3, 1)).column(0).into_owned(),
    })
}

/// Widens `h` with `k` zero columns starting at `at`.
pub(crate) fn insert_zero_columns(h: &DMatrix<f64>, at: usize, k: usize) -> DMatrix<f64> {
    let (m, n) = h.shape();
    let mut out = DMatrix::zeros(m, n + k);
    out.columns_mut(0, at).copy_from(&h.columns(0, at));
    out.columns_mut(at + k, n - at).copy_from(&h.columns(at, n - at));
    out
}
