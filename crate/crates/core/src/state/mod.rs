//! Filter state, error-state layout and covariance bookkeeping.
//!
//! The error state is ordered as
//! `[imu(15) | calib_cam(7) | calib_lidar(7) | cam clones(6 each) |
//!   lidar clones(6 each) | points(3 each) | planes(3 each)]`.

mod cov;
pub mod frames;
mod snapshot;
mod types;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

pub use cov::{insert_block, remove_block, symmetrize};
pub use frames::{clone_frame, relative_transform, transport_point, FrameMap, SensorFrame};
pub use snapshot::{CalibSnapshot, CloneSnapshot, ImuSnapshot, PlaneSnapshot, PointSnapshot, StateSnapshot};
pub use types::{
    CalibState, ClosestPointPlane, CloneWindow, ImuCoreState, PointLandmark, PoseClone, Sensor, SlamPlane,
    StateConfig,
};

use crate::error::{Error, Result};
use crate::geom::skew;

pub const IMU_DIM: usize = 15;
pub const CALIB_DIM: usize = 7;
pub const CLONE_DIM: usize = 6;

/// Offsets inside the IMU block.
pub mod imu_idx {
    pub const THETA: usize = 0;
    pub const BG: usize = 3;
    pub const V: usize = 6;
    pub const BA: usize = 9;
    pub const P: usize = 12;
}

/// Offsets inside a calibration block.
pub mod calib_idx {
    pub const THETA: usize = 0;
    pub const P: usize = 3;
    pub const TD: usize = 6;
}

pub const CALIB_CAM: usize = IMU_DIM;
pub const CALIB_LIDAR: usize = IMU_DIM + CALIB_DIM;
const CLONES_START: usize = IMU_DIM + 2 * CALIB_DIM;

pub const fn calib_index(sensor: Sensor) -> usize {
    match sensor {
        Sensor::Camera => CALIB_CAM,
        Sensor::Lidar => CALIB_LIDAR,
    }
}

/// Start offsets of every block of the error state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub cam_clones: usize,
    pub lidar_clones: usize,
    pub points: usize,
    pub planes: usize,
    pub dim: usize,
}

/// How the covariance of a newly inserted landmark is formed.
#[derive(Debug, Clone)]
pub enum LandmarkInit {
    /// Uncorrelated with the rest of the state.
    Independent(Matrix3<f64>),
    /// From an invertible linearized system `r = H_x x̃ + H_f f̃ + n`,
    /// `n ~ N(0, noise)`; gives `P_ff = H_f⁻¹ (H_x P H_xᵀ + R) H_f⁻ᵀ` and
    /// `P_fx = -H_f⁻¹ H_x P`.
    Linearized { h_x: DMatrix<f64>, h_f: Matrix3<f64>, noise: Matrix3<f64> },
}

/// Result of re-expressing a SLAM plane in another clone frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMove {
    Unchanged,
    Moved,
    /// The re-anchored closest point would violate the minimum norm; the
    /// state is left untouched and the caller should drop the plane.
    BelowMinimum,
}

/// Full filter state with joint covariance over the error state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterState {
    pub time: f64,
    pub imu: ImuCoreState,
    pub calib_cam: CalibState,
    pub calib_lidar: CalibState,
    pub cam_clones: CloneWindow,
    pub lidar_clones: CloneWindow,
    pub points: Vec<PointLandmark>,
    pub planes: Vec<SlamPlane>,
    pub cov: DMatrix<f64>,
    pub config: StateConfig,
    /// Bias-corrected angular rate at `time`, recorded by propagation.
    pub omega: Vector3<f64>,
    next_id: u64,
}

impl FilterState {
    /// `cov0` covers the IMU and both calibration blocks (29×29).
    pub fn new(
        time: f64,
        imu: ImuCoreState,
        calib_cam: CalibState,
        calib_lidar: CalibState,
        cov0: DMatrix<f64>,
        config: StateConfig,
    ) -> Result<Self> {
        if cov0.nrows() != CLONES_START || cov0.ncols() != CLONES_START {
            return Err(Error::Precondition(format!("initial covariance must be {0}x{0}", CLONES_START)));
        }
        Ok(Self {
            time,
            imu,
            calib_cam,
            calib_lidar,
            cam_clones: CloneWindow::new(config.max_cam_clones),
            lidar_clones: CloneWindow::new(config.max_lidar_clones),
            points: Vec::new(),
            planes: Vec::new(),
            cov: symmetrize(cov0),
            config,
            omega: Vector3::zeros(),
            next_id: 1,
        })
    }

    pub fn layout(&self) -> Layout {
        let cam_clones = CLONES_START;
        let lidar_clones = cam_clones + CLONE_DIM * self.cam_clones.len();
        let points = lidar_clones + CLONE_DIM * self.lidar_clones.len();
        let planes = points + 3 * self.points.len();
        let dim = planes + 3 * self.planes.len();
        Layout { cam_clones, lidar_clones, points, planes, dim }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn window(&self, sensor: Sensor) -> &CloneWindow {
        match sensor {
            Sensor::Camera => &self.cam_clones,
            Sensor::Lidar => &self.lidar_clones,
        }
    }

    fn window_mut(&mut self, sensor: Sensor) -> &mut CloneWindow {
        match sensor {
            Sensor::Camera => &mut self.cam_clones,
            Sensor::Lidar => &mut self.lidar_clones,
        }
    }

    pub fn calib(&self, sensor: Sensor) -> &CalibState {
        match sensor {
            Sensor::Camera => &self.calib_cam,
            Sensor::Lidar => &self.calib_lidar,
        }
    }

    pub fn clone_offset(&self, sensor: Sensor, id: u64) -> Option<usize> {
        let l = self.layout();
        let start = match sensor {
            Sensor::Camera => l.cam_clones,
            Sensor::Lidar => l.lidar_clones,
        };
        self.window(sensor).position(id).map(|i| start + CLONE_DIM * i)
    }

    pub fn point_offset(&self, id: u64) -> Option<usize> {
        let l = self.layout();
        self.points.iter().position(|p| p.id == id).map(|i| l.points + 3 * i)
    }

    pub fn plane_offset(&self, id: u64) -> Option<usize> {
        let l = self.layout();
        self.planes.iter().position(|p| p.id == id).map(|i| l.planes + 3 * i)
    }

    pub fn plane(&self, id: u64) -> Option<&SlamPlane> {
        self.planes.iter().find(|p| p.id == id)
    }

    pub fn point(&self, id: u64) -> Option<&PointLandmark> {
        self.points.iter().find(|p| p.id == id)
    }

    /// Clones the current IMU pose into the window of `sensor`. Returns the
    /// new clone id.
    pub fn clone_pose(&mut self, sensor: Sensor, stamp: f64) -> Result<u64> {
        if !stamp.is_finite() {
            return Err(Error::Precondition("clone stamp must be finite".into()));
        }
        let window = self.window(sensor);
        if let Some(newest) = window.newest() {
            if stamp < newest.stamp {
                return Err(Error::Precondition(format!(
                    "clone stamp {stamp} older than newest clone {}",
                    newest.stamp
                )));
            }
        }
        if window.is_full() {
            return Err(Error::Precondition(format!(
                "{sensor:?} clone window full ({}); marginalize the oldest clone first",
                window.max
            )));
        }
        let layout = self.layout();
        let at = match sensor {
            Sensor::Camera => layout.lidar_clones,
            Sensor::Lidar => layout.points,
        };
        let n = self.dim();
        let mut cross = DMatrix::zeros(CLONE_DIM, n);
        cross.rows_mut(0, 3).copy_from(&self.cov.rows(imu_idx::THETA, 3));
        cross.rows_mut(3, 3).copy_from(&self.cov.rows(imu_idx::P, 3));
        let mut corner = DMatrix::zeros(CLONE_DIM, CLONE_DIM);
        for (i, ri) in [imu_idx::THETA, imu_idx::P].iter().enumerate() {
            for (j, cj) in [imu_idx::THETA, imu_idx::P].iter().enumerate() {
                corner.view_mut((3 * i, 3 * j), (3, 3)).copy_from(&self.cov.view((*ri, *cj), (3, 3)));
            }
        }
        self.cov = symmetrize(insert_block(&self.cov, at, &cross, &corner));
        let id = self.fresh_id();
        let td_ref = self.calib(sensor).td;
        let clone = PoseClone {
            id,
            stamp,
            q_ig: self.imu.q_ig,
            p_gi: self.imu.p_gi,
            omega: self.omega,
            v_gi: self.imu.v_gi,
            td_ref,
        };
        self.window_mut(sensor).clones.push(clone);
        Ok(id)
    }

    /// Removes the oldest clone of `sensor`. Planes must be re-anchored first.
    pub fn marginalize_oldest(&mut self, sensor: Sensor) -> Result<PoseClone> {
        let oldest = *self
            .window(sensor)
            .oldest()
            .ok_or_else(|| Error::Precondition(format!("{sensor:?} clone window is empty")))?;
        self.marginalize_clone(sensor, oldest.id)
    }

    pub fn marginalize_clone(&mut self, sensor: Sensor, id: u64) -> Result<PoseClone> {
        if sensor == Sensor::Lidar {
            if let Some(p) = self.planes.iter().find(|p| p.plane.anchor_id == id) {
                return Err(Error::AnchoredPlane { landmark: p.id, clone: id });
            }
        }
        let off = self.clone_offset(sensor, id).ok_or(Error::UnknownId { kind: "clone", id })?;
        self.cov = remove_block(&self.cov, off, CLONE_DIM);
        let w = self.window_mut(sensor);
        let pos = w.position(id).expect("offset implies presence");
        Ok(w.clones.remove(pos))
    }

    /// Global unit normal of a SLAM plane under the current estimate.
    pub fn plane_normal_global(&self, plane: &ClosestPointPlane) -> Result<Vector3<f64>> {
        let frame = clone_frame(self, Sensor::Lidar, plane.anchor_id)?;
        Ok(frame.rot.transpose() * plane.normal())
    }

    /// Checks the insertion rule for a SLAM plane candidate.
    pub fn check_slam_plane(&self, plane: &ClosestPointPlane) -> Result<()> {
        if self.planes.len() >= self.config.max_slam_planes {
            return Err(Error::Rejected(format!("SLAM plane budget {} reached", self.config.max_slam_planes)));
        }
        if plane.distance() < self.config.d_min {
            return Err(Error::Rejected(format!(
                "closest point norm {:.3} below minimum {}",
                plane.distance(),
                self.config.d_min
            )));
        }
        let n_new = self.plane_normal_global(plane)?;
        let min_angle = self.config.plane_novelty_deg.to_radians();
        for existing in &self.planes {
            let n_old = self.plane_normal_global(&existing.plane)?;
            // parallel planes on either side carry the same normal information
            let angle = n_new.dot(&n_old).abs().min(1.0).acos();
            if angle <= min_angle {
                return Err(Error::Rejected(format!(
                    "normal within {:.2} deg of SLAM plane {}",
                    angle.to_degrees(),
                    existing.id
                )));
            }
        }
        Ok(())
    }

    /// Appends a SLAM plane after checking the novelty rule.
    pub fn insert_slam_plane(&mut self, plane: ClosestPointPlane, init: &LandmarkInit) -> Result<u64> {
        self.check_slam_plane(&plane)?;
        let (cross, corner) = self.landmark_blocks(init)?;
        let at = self.dim();
        self.cov = symmetrize(insert_block(&self.cov, at, &cross, &corner));
        let id = self.fresh_id();
        self.planes.push(SlamPlane { id, plane });
        Ok(id)
    }

    pub fn insert_slam_point(&mut self, p_gf: Vector3<f64>, init: &LandmarkInit) -> Result<u64> {
        if self.points.len() >= self.config.max_slam_points {
            return Err(Error::Rejected(format!("SLAM point budget {} reached", self.config.max_slam_points)));
        }
        if !p_gf.iter().all(|v| v.is_finite()) {
            return Err(Error::Precondition("point landmark must be finite".into()));
        }
        let (cross, corner) = self.landmark_blocks(init)?;
        let at = self.layout().planes;
        self.cov = symmetrize(insert_block(&self.cov, at, &cross, &corner));
        let id = self.fresh_id();
        self.points.push(PointLandmark { id, p_gf });
        Ok(id)
    }

    fn landmark_blocks(&self, init: &LandmarkInit) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        match init {
            LandmarkInit::Independent(p) => {
                Ok((DMatrix::zeros(3, n), DMatrix::from_iterator(3, 3, p.iter().copied())))
            }
            LandmarkInit::Linearized { h_x, h_f, noise } => {
                if h_x.nrows() != 3 || h_x.ncols() != n {
                    return Err(Error::Precondition(format!("H_x must be 3x{n}")));
                }
                let h_f_inv = h_f
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("landmark Jacobian not invertible".into()))?;
                let h_f_inv = DMatrix::from_iterator(3, 3, h_f_inv.iter().copied());
                let noise = DMatrix::from_iterator(3, 3, noise.iter().copied());
                let hp = h_x * &self.cov;
                let cross = -(&h_f_inv * &hp);
                let corner = &h_f_inv * (&hp * h_x.transpose() + noise) * h_f_inv.transpose();
                Ok((cross, corner))
            }
        }
    }

    pub fn remove_plane(&mut self, id: u64) -> Result<SlamPlane> {
        let off = self.plane_offset(id).ok_or(Error::UnknownId { kind: "plane", id })?;
        self.cov = remove_block(&self.cov, off, 3);
        let pos = self.planes.iter().position(|p| p.id == id).expect("present");
        Ok(self.planes.remove(pos))
    }

    pub fn remove_point(&mut self, id: u64) -> Result<PointLandmark> {
        let off = self.point_offset(id).ok_or(Error::UnknownId { kind: "point", id })?;
        self.cov = remove_block(&self.cov, off, 3);
        let pos = self.points.iter().position(|p| p.id == id).expect("present");
        Ok(self.points.remove(pos))
    }

    /// Re-expresses a SLAM plane in the LiDAR frame of `new_anchor`; the
    /// covariance follows the first-order Jacobian of the re-anchoring map.
    pub fn move_anchor(&mut self, plane_id: u64, new_anchor: u64) -> Result<AnchorMove> {
        let plane = self.plane(plane_id).ok_or(Error::UnknownId { kind: "plane", id: plane_id })?.plane;
        if plane.anchor_id == new_anchor {
            return Ok(AnchorMove::Unchanged);
        }
        let re = reanchor(self, &plane, new_anchor)?;
        if re.cp.norm() < self.config.d_min {
            return Ok(AnchorMove::BelowMinimum);
        }
        let off = self.plane_offset(plane_id).expect("plane present");
        let n = self.dim();
        let mut jac = re.h_state;
        let mut v = jac.view_mut((0, off), (3, 3));
        v += SMatrix::<f64, 3, 3>::from(re.h_cp);
        let cp_new = re.cp;
        // P <- T P Tᵀ with T = I except the plane rows.
        let rows_p = &jac * &self.cov;
        let corner = &rows_p * jac.transpose();
        let mut cov = self.cov.clone();
        cov.rows_mut(off, 3).copy_from(&rows_p);
        let col = rows_p.transpose();
        cov.columns_mut(off, 3).copy_from(&col);
        cov.view_mut((off, off), (3, 3)).copy_from(&corner);
        debug_assert_eq!(cov.nrows(), n);
        self.cov = symmetrize(cov);
        let p = self.planes.iter_mut().find(|p| p.id == plane_id).expect("present");
        p.plane = ClosestPointPlane::new(cp_new, new_anchor);
        Ok(AnchorMove::Moved)
    }

    /// Applies an error-state correction: boxplus on rotations, addition
    /// elsewhere.
    pub fn apply_correction(&mut self, dx: &DVector<f64>) {
        let l = self.layout();
        assert_eq!(dx.len(), l.dim, "correction dimension mismatch");
        let v3 = |i: usize| Vector3::new(dx[i], dx[i + 1], dx[i + 2]);
        self.imu.q_ig = self.imu.q_ig.boxplus(&v3(imu_idx::THETA));
        self.imu.bg += v3(imu_idx::BG);
        self.imu.v_gi += v3(imu_idx::V);
        self.imu.ba += v3(imu_idx::BA);
        self.imu.p_gi += v3(imu_idx::P);
        for (calib, off) in [(&mut self.calib_cam, CALIB_CAM), (&mut self.calib_lidar, CALIB_LIDAR)] {
            calib.q_si = calib.q_si.boxplus(&v3(off + calib_idx::THETA));
            calib.p_si += v3(off + calib_idx::P);
            calib.td += dx[off + calib_idx::TD];
        }
        for (window, start) in [(&mut self.cam_clones, l.cam_clones), (&mut self.lidar_clones, l.lidar_clones)] {
            for (i, c) in window.clones.iter_mut().enumerate() {
                let off = start + CLONE_DIM * i;
                c.q_ig = c.q_ig.boxplus(&v3(off));
                c.p_gi += v3(off + 3);
            }
        }
        for (i, p) in self.points.iter_mut().enumerate() {
            p.p_gf += v3(l.points + 3 * i);
        }
        for (i, p) in self.planes.iter_mut().enumerate() {
            p.plane.cp += v3(l.planes + 3 * i);
        }
    }

    /// Verifies layout, symmetry and positive semi-definiteness.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.dim();
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(Error::Precondition(format!(
                "covariance is {}x{} but state dimension is {n}",
                self.cov.nrows(),
                self.cov.ncols()
            )));
        }
        let scale = self.cov.abs().max().max(1e-300);
        let asym = (&self.cov - self.cov.transpose()).abs().max();
        if asym > 1e-9 * scale {
            return Err(Error::Precondition(format!("covariance asymmetric by {asym:e}")));
        }
        let min_eig = self.cov.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(Error::Precondition(format!("covariance has eigenvalue {min_eig:e}")));
        }
        for w in [&self.cam_clones, &self.lidar_clones] {
            if w.len() > w.max {
                return Err(Error::Precondition("clone window over capacity".into()));
            }
            if w.clones.windows(2).any(|p| p[1].stamp < p[0].stamp) {
                return Err(Error::Precondition("clone stamps out of order".into()));
            }
        }
        Ok(())
    }

    /// Marginal covariance of the listed index ranges `(start, len)`.
    pub fn marginal(&self, blocks: &[(usize, usize)]) -> DMatrix<f64> {
        let idx: Vec<usize> = blocks.iter().flat_map(|&(s, l)| s..s + l).collect();
        DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.cov[(idx[i], idx[j])])
    }
}

/// A closest-point plane re-expressed in another LiDAR clone frame.
pub struct Reanchored {
    pub cp: Vector3<f64>,
    /// Partial with respect to the error state excluding the plane itself.
    pub h_state: DMatrix<f64>,
    /// Partial with respect to the original closest point.
    pub h_cp: Matrix3<f64>,
}

/// Transforms `plane` into the frame of LiDAR clone `new_anchor` and
/// linearizes the map.
pub fn reanchor(state: &FilterState, plane: &ClosestPointPlane, new_anchor: u64) -> Result<Reanchored> {
    let fa = clone_frame(state, Sensor::Lidar, plane.anchor_id)?;
    let fb = clone_frame(state, Sensor::Lidar, new_anchor)?;
    let d_a = plane.distance();
    let n_a = plane.normal();
    let r_ba = fb.rot * fa.rot.transpose();
    let n_b = r_ba * n_a;
    let t = fa.rot * (fb.pos - fa.pos);
    let d_b = d_a - n_a.dot(&t);
    let cp = n_b * d_b;

    let proj = (Matrix3::identity() - n_a * n_a.transpose()) / d_a;
    let n_at = n_a.transpose();
    let d_alpha_a: Matrix3<f64> = d_b * (-r_ba * skew(&n_a)) + n_b * (-(n_at * skew(&t)));
    let d_alpha_b: Matrix3<f64> = d_b * skew(&n_b);
    let d_beta_a: Matrix3<f64> = n_b * (n_at * fa.rot);
    let d_beta_b: Matrix3<f64> = -(n_b * (n_at * fa.rot));
    let h_cp: Matrix3<f64> = d_b * r_ba * proj + n_b * (n_at - t.transpose() * proj);

    let mut h_state = DMatrix::zeros(3, state.dim());
    fa.map.add_jacobian::<3>(&mut h_state, 0, &d_alpha_a, &d_beta_a);
    fb.map.add_jacobian::<3>(&mut h_state, 0, &d_alpha_b, &d_beta_b);
    Ok(Reanchored { cp, h_state, h_cp })
}
