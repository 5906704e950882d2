//! Point-to-plane residuals of LiDAR plane tracks.

use nalgebra::{DMatrix, DVector, Matrix1x3, Matrix3, Vector3};

use super::ekf::{
    chi2_gate, ekf_update, gated_update, insert_zero_columns, project_out, split_landmark, GateDecision, Noise,
    ProjectedBlock,
};
use crate::error::{Error, Result};
use crate::geom::Rot3;
use crate::lidar::{init_plane, FrameObservation, PlaneFit};
use crate::state::{clone_frame, relative_transform, transport_point, ClosestPointPlane, FilterState, LandmarkInit, Sensor};

/// Relative tolerance below which a singular value of `H_π` counts as zero.
const RANK_TOL: f64 = 1e-9;

/// Signed distance of `p_f` from the plane with closest point `cp`, both in
/// the same frame.
pub fn point_to_plane_residual(p_f: &Vector3<f64>, cp: &Vector3<f64>) -> f64 {
    let d = cp.norm();
    cp.dot(p_f) / d - d
}

/// A plane re-expressed in another frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedPlane {
    pub normal: Vector3<f64>,
    pub distance: f64,
    /// `|d| < d_min`: the closest point parametrization degrades here and the
    /// plane should be re-anchored.
    pub near_origin: bool,
}

/// Transforms a closest-point plane of frame `A` into frame `L`, where
/// `rot_la` maps `A` coordinates into `L` and `p_al` is the origin of `L`
/// in `A`.
pub fn transform_plane(cp_a: &Vector3<f64>, rot_la: &Rot3, p_al: &Vector3<f64>, d_min: f64) -> TransformedPlane {
    let d_a = cp_a.norm();
    let n_a = cp_a / d_a;
    let distance = d_a - p_al.dot(&n_a);
    TransformedPlane { normal: rot_la * n_a, distance, near_origin: distance.abs() < d_min }
}

/// Linearized point-to-plane measurements of one plane over several clones.
///
/// Residual rows follow the order of `observations` and their points.
#[derive(Debug, Clone)]
pub struct PlaneResidualBlock {
    pub r: DVector<f64>,
    pub h_x: DMatrix<f64>,
    /// Columns for the closest point in the anchor frame.
    pub h_pi: DMatrix<f64>,
    /// Columns for the stacked point noise, `3` per point. Rows are unit.
    pub h_n: DMatrix<f64>,
    pub sigma_f: f64,
    pub plane: ClosestPointPlane,
}

impl PlaneResidualBlock {
    pub fn rows(&self) -> usize {
        self.r.len()
    }
}

/// Builds the block for `plane` from planar points grouped by LiDAR clone.
pub fn build_plane_block(
    state: &FilterState,
    plane: &ClosestPointPlane,
    observations: &[(u64, Vec<Vector3<f64>>)],
    sigma_f: f64,
) -> Result<PlaneResidualBlock> {
    let anchor = clone_frame(state, Sensor::Lidar, plane.anchor_id)?;
    let m: usize = observations.iter().map(|(_, p)| p.len()).sum();
    let n = state.dim();
    let d = plane.distance();
    let nrm = plane.normal();
    let proj = (Matrix3::identity() - nrm * nrm.transpose()) / d;
    let nt = nrm.transpose();

    let mut r = DVector::zeros(m);
    let mut h_x = DMatrix::zeros(m, n);
    let mut h_pi = DMatrix::zeros(m, 3);
    let mut h_n = DMatrix::zeros(m, 3 * m);
    let mut row = 0;
    for (clone_id, points) in observations {
        let frame = clone_frame(state, Sensor::Lidar, *clone_id)?;
        let c_ax = anchor.rot * frame.rot.transpose();
        let n_x: Matrix1x3<f64> = nt * c_ax;
        for q in points {
            let t = transport_point(&anchor, &frame, q);
            r[row] = -(nrm.dot(&t.w) - d);
            let da: Matrix1x3<f64> = nt * t.d_alpha_a;
            let db: Matrix1x3<f64> = nt * t.d_beta_a;
            anchor.map.add_jacobian::<1>(&mut h_x, row, &da, &db);
            let da: Matrix1x3<f64> = nt * t.d_alpha_x;
            let db: Matrix1x3<f64> = nt * t.d_beta_x;
            frame.map.add_jacobian::<1>(&mut h_x, row, &da, &db);
            let hp: Matrix1x3<f64> = t.w.transpose() * proj - nt;
            h_pi.view_mut((row, 0), (1, 3)).copy_from(&hp);
            h_n.view_mut((row, 3 * row), (1, 3)).copy_from(&n_x);
            row += 1;
        }
    }
    Ok(PlaneResidualBlock { r, h_x, h_pi, h_n, sigma_f, plane: *plane })
}

/// Observations transported into the frame of `anchor_id` under the
/// current estimate.
pub fn anchor_observations(
    state: &FilterState,
    anchor_id: u64,
    observations: &[(u64, Vec<Vector3<f64>>)],
) -> Result<Vec<FrameObservation>> {
    let anchor = clone_frame(state, Sensor::Lidar, anchor_id)?;
    observations
        .iter()
        .map(|(id, points)| {
            let frame = clone_frame(state, Sensor::Lidar, *id)?;
            let (rot, trans) = relative_transform(&anchor, &frame);
            Ok(FrameObservation { rot, trans, points: points.clone() })
        })
        .collect()
}

/// Fits the plane of a track in the frame of its newest observing clone.
pub fn estimate_track_plane(state: &FilterState, observations: &[(u64, Vec<Vector3<f64>>)]) -> Result<(ClosestPointPlane, PlaneFit)> {
    let anchor_id = observations
        .iter()
        .map(|(id, _)| *id)
        .max_by_key(|id| state.clone_offset(Sensor::Lidar, *id))
        .ok_or_else(|| Error::Precondition("track has no observations".into()))?;
    let fit = init_plane(&anchor_observations(state, anchor_id, observations)?)?;
    Ok((ClosestPointPlane::new(fit.cp, anchor_id), fit))
}

/// Projects the block onto the left nullspace of `H_π`.
pub fn msckf_nullspace_project(block: &PlaneResidualBlock) -> Result<ProjectedBlock> {
    let m = block.rows();
    if m <= 3 {
        return Err(Error::Precondition(format!("projection needs more than 3 rows, got {m}")));
    }
    Ok(project_out(&block.h_pi, &block.h_x, &block.r, block.sigma_f, RANK_TOL))
}

/// Residual and Jacobian of a SLAM plane over the full error state.
pub fn slam_plane_system(
    state: &FilterState,
    plane_id: u64,
    observations: &[(u64, Vec<Vector3<f64>>)],
    sigma_f: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let plane = state.plane(plane_id).ok_or(Error::UnknownId { kind: "plane", id: plane_id })?.plane;
    let off = state.plane_offset(plane_id).expect("plane present");
    let block = build_plane_block(state, &plane, observations, sigma_f)?;
    let mut h = block.h_x;
    let mut cols = h.columns_mut(off, 3);
    cols += &block.h_pi;
    Ok((block.r, h))
}

/// Joint update of the state and a SLAM plane. Observations that fail the
/// gate are dropped without touching the state.
pub fn slam_plane_update(
    state: &mut FilterState,
    plane_id: u64,
    observations: &[(u64, Vec<Vector3<f64>>)],
    sigma_f: f64,
    confidence: f64,
) -> Result<GateDecision> {
    let (r, h) = slam_plane_system(state, plane_id, observations, sigma_f)?;
    gated_update(state, &r, &h, sigma_f, confidence)
}

/// Inserts a tracked plane into the state from its linearized block: three
/// rows initialize the plane and the rest update the enlarged state. The
/// remaining rows are gated first; on rejection nothing is inserted.
pub fn promote_plane(
    state: &mut FilterState,
    block: &PlaneResidualBlock,
    confidence: f64,
) -> Result<(Option<u64>, GateDecision)> {
    state.check_slam_plane(&block.plane)?;
    let split = split_landmark(&block.h_pi, &block.h_x, &block.r, RANK_TOL)?;
    let var = block.sigma_f * block.sigma_f;
    // the lower rows do not involve the plane, so gating before insertion
    // sees the same innovation covariance as after it
    let gate = chi2_gate(state, &split.r2, &split.h_x2, &Noise::Isotropic(var), confidence)?;
    if !gate.accepted {
        return Ok((None, gate));
    }
    let h_f_inv = split.h_f.try_inverse().ok_or_else(|| Error::Singular("plane Jacobian not invertible".into()))?;
    // first-order estimate consistent with the initializing rows
    let plane = ClosestPointPlane::new(block.plane.cp + h_f_inv * split.r1, block.plane.anchor_id);
    let init = LandmarkInit::Linearized { h_x: split.h_x1, h_f: split.h_f, noise: Matrix3::identity() * var };
    let n = state.dim();
    let id = state.insert_slam_plane(plane, &init)?;
    let h2 = insert_zero_columns(&split.h_x2, n, 3);
    ekf_update(state, &split.r2, &h2, &Noise::Isotropic(var))?;
    Ok((Some(id), gate))
}
