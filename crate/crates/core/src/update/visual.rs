//! Pinhole point-feature measurements on normalized image coordinates.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::ekf::{
    chi2_gate, ekf_update, gated_update, insert_zero_columns, project_out, split_landmark, GateDecision, Noise,
    ProjectedBlock,
};
use crate::error::{Error, Result};
use crate::state::{clone_frame, FilterState, LandmarkInit, Sensor, SensorFrame};

const RANK_TOL: f64 = 1e-9;
/// Points closer than this to a camera are not trusted.
const MIN_DEPTH: f64 = 0.05;
/// Ratio of largest to smallest eigenvalue of the linear triangulation
/// system beyond which the baseline is considered too small.
const MAX_TRIANGULATION_CONDITION: f64 = 1e7;
const GN_ITERATIONS: usize = 10;

/// A feature observation in normalized image coordinates of a camera clone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BearingMeasurement {
    pub clone_id: u64,
    pub uv: Vector2<f64>,
    /// Noise standard deviation on the normalized plane, `σ_px / f`.
    pub sigma: f64,
}

impl BearingMeasurement {
    pub fn new(clone_id: u64, uv: Vector2<f64>, sigma: f64) -> Self {
        Self { clone_id, uv, sigma }
    }
}

/// Normalized projection of a camera-frame point, `None` behind the camera.
pub fn project(p_c: &Vector3<f64>) -> Option<Vector2<f64>> {
    (p_c.z > MIN_DEPTH).then(|| Vector2::new(p_c.x / p_c.z, p_c.y / p_c.z))
}

fn projection_jacobian(p_c: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p_c.z;
    Matrix2x3::new(iz, 0.0, -p_c.x * iz * iz, 0.0, iz, -p_c.y * iz * iz)
}

fn frames(state: &FilterState, obs: &[BearingMeasurement]) -> Result<Vec<SensorFrame>> {
    obs.iter().map(|o| clone_frame(state, Sensor::Camera, o.clone_id)).collect()
}

/// Triangulates a global point from bearings: a linear ray intersection
/// refined by Gauss-Newton on the reprojection error.
pub fn triangulate(state: &FilterState, obs: &[BearingMeasurement]) -> Result<Vector3<f64>> {
    if obs.len() < 2 {
        return Err(Error::Precondition(format!("triangulation needs 2 bearings, got {}", obs.len())));
    }
    let frames = frames(state, obs)?;
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (o, f) in obs.iter().zip(&frames) {
        let d = (f.rot.transpose() * Vector3::new(o.uv.x, o.uv.y, 1.0)).normalize();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * f.pos;
    }
    let eig = a.symmetric_eigen().eigenvalues;
    if eig.min() <= eig.max() / MAX_TRIANGULATION_CONDITION {
        return Err(Error::Singular("bearings nearly parallel".into()));
    }
    let mut p = a.lu().solve(&b).ok_or_else(|| Error::Singular("triangulation system".into()))?;
    for _ in 0..GN_ITERATIONS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (o, f) in obs.iter().zip(&frames) {
            let p_c = f.from_global(&p);
            let Some(uv) = project(&p_c) else {
                return Err(Error::Singular("triangulated point behind a camera".into()));
            };
            let j = projection_jacobian(&p_c) * f.rot;
            let r = o.uv - uv;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let step = jtj.cholesky().ok_or_else(|| Error::Singular("triangulation normal equations".into()))?.solve(&jtr);
        p += step;
        if step.norm() < 1e-12 * p.norm().max(1.0) {
            break;
        }
    }
    for f in &frames {
        if f.from_global(&p).z <= MIN_DEPTH {
            return Err(Error::Singular("triangulated point behind a camera".into()));
        }
    }
    Ok(p)
}

/// Linearized reprojection residuals of one point over several clones.
#[derive(Debug, Clone)]
pub struct PointResidualBlock {
    pub r: DVector<f64>,
    pub h_x: DMatrix<f64>,
    /// Columns for the global point position.
    pub h_f: DMatrix<f64>,
    pub sigma: f64,
    pub p_gf: Vector3<f64>,
}

/// Builds the block of a global point `p_gf` seen in `obs`. All
/// observations must share one noise level.
pub fn build_point_block(state: &FilterState, p_gf: &Vector3<f64>, obs: &[BearingMeasurement]) -> Result<PointResidualBlock> {
    let sigma = obs.first().map(|o| o.sigma).ok_or_else(|| Error::Precondition("no bearings".into()))?;
    if obs.iter().any(|o| o.sigma != sigma || !o.uv.iter().all(|v| v.is_finite())) {
        return Err(Error::Precondition("bearings must be finite and share one noise level".into()));
    }
    let m = 2 * obs.len();
    let mut r = DVector::zeros(m);
    let mut h_x = DMatrix::zeros(m, state.dim());
    let mut h_f = DMatrix::zeros(m, 3);
    for (i, (o, f)) in obs.iter().zip(frames(state, obs)?).enumerate() {
        let p_c = f.from_global(p_gf);
        let uv = project(&p_c).ok_or_else(|| Error::Singular("point behind camera".into()))?;
        r.fixed_rows_mut::<2>(2 * i).copy_from(&(o.uv - uv));
        let j = projection_jacobian(&p_c);
        // δp_C = [p_C]x α - C β + C p̃_f
        let d_alpha = j * crate::geom::skew(&p_c);
        let d_beta = -(j * f.rot);
        f.map.add_jacobian::<2>(&mut h_x, 2 * i, &d_alpha, &d_beta);
        h_f.view_mut((2 * i, 0), (2, 3)).copy_from(&(j * f.rot));
    }
    Ok(PointResidualBlock { r, h_x, h_f, sigma, p_gf: *p_gf })
}

/// Removes the point from the block by left-nullspace projection.
pub fn point_nullspace_project(block: &PointResidualBlock) -> Result<ProjectedBlock> {
    if block.r.len() <= 3 {
        return Err(Error::Precondition(format!("projection needs more than 3 rows, got {}", block.r.len())));
    }
    Ok(project_out(&block.h_f, &block.h_x, &block.r, block.sigma, RANK_TOL))
}

/// Result of an MSCKF feature update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureOutcome {
    Updated(GateDecision),
    Gated(GateDecision),
    /// Triangulation failed or the track was too short; the track is dropped.
    Dropped,
}

/// Triangulates a feature track and applies the projected gated update.
pub fn visual_msckf_update(state: &mut FilterState, obs: &[BearingMeasurement], confidence: f64) -> Result<FeatureOutcome> {
    if obs.len() < 3 {
        return Ok(FeatureOutcome::Dropped);
    }
    let p = match triangulate(state, obs) {
        Ok(p) => p,
        Err(Error::Singular(_)) => return Ok(FeatureOutcome::Dropped),
        Err(e) => return Err(e),
    };
    let block = match build_point_block(state, &p, obs) {
        Ok(b) => b,
        Err(Error::Singular(_)) => return Ok(FeatureOutcome::Dropped),
        Err(e) => return Err(e),
    };
    let proj = point_nullspace_project(&block)?;
    let gate = gated_update(state, &proj.r, &proj.h_x, proj.sigma, confidence)?;
    Ok(if gate.accepted { FeatureOutcome::Updated(gate) } else { FeatureOutcome::Gated(gate) })
}

/// Residual and Jacobian of a SLAM point over the full error state.
pub fn slam_point_system(state: &FilterState, point_id: u64, obs: &[BearingMeasurement]) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let p = state.point(point_id).ok_or(Error::UnknownId { kind: "point", id: point_id })?.p_gf;
    let off = state.point_offset(point_id).expect("point present");
    let block = build_point_block(state, &p, obs)?;
    let mut h = block.h_x;
    let mut cols = h.columns_mut(off, 3);
    cols += &block.h_f;
    Ok((block.r, h, block.sigma))
}

pub fn slam_point_update(state: &mut FilterState, point_id: u64, obs: &[BearingMeasurement], confidence: f64) -> Result<GateDecision> {
    let (r, h, sigma) = slam_point_system(state, point_id, obs)?;
    gated_update(state, &r, &h, sigma, confidence)
}

/// Triangulates a track and inserts it as a SLAM point, using the remaining
/// rows as an update. On a failed gate nothing is inserted.
pub fn promote_point(state: &mut FilterState, obs: &[BearingMeasurement], confidence: f64) -> Result<(Option<u64>, GateDecision)> {
    let p = triangulate(state, obs)?;
    let block = build_point_block(state, &p, obs)?;
    let split = split_landmark(&block.h_f, &block.h_x, &block.r, RANK_TOL)?;
    let var = block.sigma * block.sigma;
    let gate = chi2_gate(state, &split.r2, &split.h_x2, &Noise::Isotropic(var), confidence)?;
    if !gate.accepted {
        return Ok((None, gate));
    }
    let h_f_inv = split.h_f.try_inverse().ok_or_else(|| Error::Singular("point Jacobian not invertible".into()))?;
    let at = state.layout().planes;
    let init = LandmarkInit::Linearized { h_x: split.h_x1, h_f: split.h_f, noise: Matrix3::identity() * var };
    let id = state.insert_slam_point(p + h_f_inv * split.r1, &init)?;
    let h2 = insert_zero_columns(&split.h_x2, at, 3);
    ekf_update(state, &split.r2, &h2, &Noise::Isotropic(var))?;
    Ok((Some(id), gate))
}
