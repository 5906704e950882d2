//! Analytic unobservable directions in the reduced-state layout, evaluated at
//! the true state of the first step. The sign and block order follow this
//! crate's error-state conventions.

use nalgebra::{DVector, Vector3};

use super::system::{reduced_dim, GlobalPlane, CALIB, PLANES, TD};
use crate::geom::skew;
use crate::state::{calib_idx, imu_idx, CalibState};
use crate::trajectory::Kinematics;

/// A named direction of the reduced state.
#[derive(Debug, Clone)]
pub struct Direction {
    pub name: String,
    pub vector: DVector<f64>,
}

struct Builder {
    v: DVector<f64>,
}

impl Builder {
    fn new(n_planes: usize) -> Self {
        Self { v: DVector::zeros(reduced_dim(n_planes)) }
    }

    fn set(mut self, at: usize, x: &Vector3<f64>) -> Self {
        self.v.fixed_rows_mut::<3>(at).copy_from(x);
        self
    }

    fn td(mut self, x: f64) -> Self {
        self.v[TD] = x;
        self
    }

    fn named(self, name: impl Into<String>) -> Direction {
        Direction { name: name.into(), vector: self.v }
    }
}

const CALIB_THETA: usize = CALIB + calib_idx::THETA;
const CALIB_P: usize = CALIB + calib_idx::P;

fn plane_at(j: usize) -> usize {
    PLANES + 3 * j
}

/// Rotation of the whole scene about gravity.
pub fn global_yaw(k: &Kinematics, planes: &[GlobalPlane], g: &Vector3<f64>) -> Direction {
    let mut b = Builder::new(planes.len())
        .set(imu_idx::THETA, &(k.rot * g))
        .set(imu_idx::V, &(-skew(&k.vel) * g))
        .set(imu_idx::P, &(-skew(&k.pos) * g));
    for (j, p) in planes.iter().enumerate() {
        b = b.set(plane_at(j), &(-skew(&p.closest_point()) * g));
    }
    b.named("N1 global yaw")
}

/// Translation of the platform by `x` with every plane following.
pub fn global_translation(planes: &[GlobalPlane], x: &Vector3<f64>, name: &str) -> Direction {
    let mut b = Builder::new(planes.len()).set(imu_idx::P, x);
    for (j, p) in planes.iter().enumerate() {
        b = b.set(plane_at(j), &(p.normal * p.normal.dot(x)));
    }
    b.named(name)
}

/// The seven directions of a single (or parallel) plane set. `planes[0]`
/// defines the normal.
pub fn one_plane_directions(k: &Kinematics, planes: &[GlobalPlane], g: &Vector3<f64>) -> Vec<Direction> {
    let basis = planes[0].basis();
    let n = planes[0].normal;
    let mut out = vec![global_yaw(k, planes, g)];
    for (i, label) in ["N2 translation n1", "N3 translation n2", "N4 translation n"].iter().enumerate() {
        out.push(global_translation(planes, &basis.column(i).into_owned(), label));
    }
    for (i, label) in ["N5 in-plane velocity n1", "N6 in-plane velocity n2"].iter().enumerate() {
        out.push(Builder::new(planes.len()).set(imu_idx::V, &basis.column(i).into_owned()).named(*label));
    }
    out.push(Builder::new(planes.len()).set(imu_idx::THETA, &(k.rot * n)).named("N7 rotation about normal"));
    out
}

/// Extrinsic rotation about the normal and extrinsic translation, seen
/// under pure translation.
pub fn pure_translation_directions(k: &Kinematics, calib: &CalibState, planes: &[GlobalPlane]) -> Vec<Direction> {
    let r_c = calib.q_si.to_rot();
    let n = planes[0].normal;
    let basis = planes[0].basis();
    let mut out = vec![Builder::new(planes.len()).set(CALIB_THETA, &(r_c * k.rot * n)).named("N8 extrinsic rotation about normal")];
    for (i, label) in ["N9 extrinsic translation n1", "N10 extrinsic translation n2", "N11 extrinsic translation n"]
        .iter()
        .enumerate()
    {
        let x = basis.column(i).into_owned();
        let mut b = Builder::new(planes.len()).set(CALIB_P, &(r_c * k.rot * x));
        for (j, p) in planes.iter().enumerate() {
            b = b.set(plane_at(j), &(-(p.normal * p.normal.dot(&x))));
        }
        out.push(b.named(*label));
    }
    out
}

/// Extrinsic translation along the body rotation axis `axis_body`, with the
/// platform moved to keep the sensor in place.
pub fn rotation_axis_translation(k: &Kinematics, calib: &CalibState, axis_body: &Vector3<f64>, n_planes: usize) -> Direction {
    let k_l = calib.q_si.to_rot() * axis_body;
    let k_g = k.rot.transpose() * axis_body;
    Builder::new(n_planes).set(imu_idx::P, &k_g).set(CALIB_P, &k_l).named("N12 extrinsic translation along axis")
}

/// Extrinsic translation along a rotation axis lying in the plane.
pub fn in_plane_axis_translation(calib: &CalibState, axis_body: &Vector3<f64>, n_planes: usize) -> Direction {
    let k_l = calib.q_si.to_rot() * axis_body;
    Builder::new(n_planes).set(CALIB_P, &k_l).named("N13 extrinsic translation along in-plane axis")
}

/// Time offset traded against the extrinsics under constant body rate and
/// body velocity.
pub fn time_offset_const_velocity(k: &Kinematics, calib: &CalibState, n_planes: usize) -> Direction {
    let r_c = calib.q_si.to_rot();
    Builder::new(n_planes)
        .set(CALIB_THETA, &(-(r_c * k.omega)))
        .set(CALIB_P, &(r_c * k.body_velocity()))
        .td(1.0)
        .named("N14 time offset, constant rate and velocity")
}

/// Time offset traded against a shift of the trajectory under constant body
/// rate and global acceleration.
pub fn time_offset_const_accel(k: &Kinematics, calib: &CalibState, n_planes: usize) -> Direction {
    let r_c = calib.q_si.to_rot();
    Builder::new(n_planes)
        .set(imu_idx::P, &k.vel)
        .set(imu_idx::V, &k.acc)
        .set(CALIB_THETA, &(r_c * k.omega))
        .td(-1.0)
        .named("N15 time offset, constant rate and acceleration")
}

/// Time offset alone, for rotation about the normal with in-plane velocity.
pub fn time_offset_only(n_planes: usize) -> Direction {
    Builder::new(n_planes).td(1.0).named("N16 time offset")
}
