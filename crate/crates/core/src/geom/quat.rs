use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::so3::{skew, Rot3};

/// Unit quaternion in JPL convention: vector part `(x, y, z)` first, scalar
/// `w` last. `to_rot` yields the global-to-local rotation `R` and
/// composition satisfies `(a ⊗ b).to_rot() == a.to_rot() * b.to_rot()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JplQuaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Default for JplQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl JplQuaternion {
    pub const fn identity() -> Self {
        Self { x: 0.0, y: 0.0, z: 0.0, w: 1.0 }
    }

    /// Builds a quaternion and normalizes it. Sign is canonicalized to `w >= 0`.
    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { x, y, z, w }.normalized()
    }

    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    fn normalized(self) -> Self {
        let n = self.norm();
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self { x: self.x * s, y: self.y * s, z: self.z * s, w: self.w * s }
    }

    pub fn conjugate(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z, w: self.w }
    }

    /// Quaternion with `to_rot() == exp(-[phi]x)`, i.e. the JPL small-angle
    /// quaternion `[phi/2, 1]` without truncation.
    pub fn from_rotation_vector(phi: &Vector3<f64>) -> Self {
        let theta = phi.norm();
        if theta < 1e-12 {
            return Self::new(0.5 * phi.x, 0.5 * phi.y, 0.5 * phi.z, 1.0);
        }
        let s = (0.5 * theta).sin() / theta;
        Self::new(phi.x * s, phi.y * s, phi.z * s, (0.5 * theta).cos())
    }

    /// JPL product `self ⊗ rhs`.
    pub fn multiply(&self, rhs: &Self) -> Self {
        Self::multiply_raw(self, rhs).normalized()
    }

    /// Product without renormalization; used by the kinematics integrator.
    pub(crate) fn multiply_raw(a: &Self, b: &Self) -> Self {
        let av = a.vec();
        let bv = b.vec();
        let v = a.w * bv + b.w * av - av.cross(&bv);
        Self { x: v.x, y: v.y, z: v.z, w: a.w * b.w - av.dot(&bv) }
    }

    pub(crate) fn scaled_add(&self, other: &Self, s: f64) -> Self {
        Self { x: self.x + s * other.x, y: self.y + s * other.y, z: self.z + s * other.z, w: self.w + s * other.w }
    }

    pub(crate) fn renormalize(self) -> Self {
        self.normalized()
    }

    /// Error-state retraction `exp_q(dθ) ⊗ q`.
    pub fn boxplus(&self, dtheta: &Vector3<f64>) -> Self {
        Self::from_rotation_vector(dtheta).multiply(self)
    }

    pub fn to_rot(&self) -> Rot3 {
        let q = self.normalized();
        let v = q.vec();
        (2.0 * q.w * q.w - 1.0) * Matrix3::identity() - 2.0 * q.w * skew(&v) + 2.0 * v * v.transpose()
    }

    /// Inverse of [`to_rot`](Self::to_rot) (Shepperd's method on the transpose).
    pub fn from_rot(r: &Rot3) -> Self {
        let m = r.transpose();
        let tr = m.trace();
        let (x, y, z, w);
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::new(x, y, z, w)
    }

    /// Rotates a global vector into the local frame.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rot() * v
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3::{so3_exp, so3_log};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut ChaCha8Rng) -> JplQuaternion {
        JplQuaternion::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        )
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_quat(&mut rng);
        let p = JplQuaternion::identity().multiply(&q);
        assert_relative_eq!(p.as_array()[..], q.as_array()[..], epsilon = 1e-15);
    }

    #[test]
    fn conjugate_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_quat(&mut rng);
        let p = q.multiply(&q.conjugate());
        assert_relative_eq!(p.as_array()[..], [0.0, 0.0, 0.0, 1.0][..], epsilon = 1e-15);
    }

    #[test]
    fn product_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_quat(&mut rng);
            let b = random_quat(&mut rng);
            assert_relative_eq!(a.multiply(&b).to_rot(), a.to_rot() * b.to_rot(), epsilon = 1e-13);
        }
    }

    #[test]
    fn boxplus_zero_is_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_quat(&mut rng);
        assert_relative_eq!(q.boxplus(&Vector3::zeros()).as_array()[..], q.as_array()[..], epsilon = 1e-15);
    }

    #[test]
    fn boxplus_small_angle_about_x() {
        let eps = 1e-4;
        let q = JplQuaternion::identity().boxplus(&Vector3::new(eps, 0.0, 0.0));
        assert_relative_eq!(q.x, 0.5 * eps, epsilon = eps * eps);
        assert_relative_eq!(q.w, 1.0, epsilon = eps * eps);
        // JPL: frame rotation by +eps about x
        assert_relative_eq!(q.to_rot(), Matrix3::identity() - skew(&Vector3::new(eps, 0.0, 0.0)), epsilon = eps * eps);
    }

    #[test]
    fn boxplus_matches_exponential_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = random_quat(&mut rng);
            let u = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalize();
            let d = 1e-3 * u;
            let expected = so3_exp(&(-d)) * q.to_rot();
            assert_relative_eq!(q.boxplus(&d).to_rot(), expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn rot_quat_round_trip_including_large_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let phi = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalize()
                * rng.random_range(0.0..std::f64::consts::PI);
            let r = so3_exp(&phi);
            let back = JplQuaternion::from_rot(&r).to_rot();
            assert!((back - r).norm() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn unit_norm_after_operations(a in prop::array::uniform4(-1.0f64..1.0), b in prop::array::uniform4(-1.0f64..1.0),
                                      d in prop::array::uniform3(-0.5f64..0.5)) {
            prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            prop_assume!(b.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let qa = JplQuaternion::new(a[0], a[1], a[2], a[3]);
            let qb = JplQuaternion::new(b[0], b[1], b[2], b[3]);
            prop_assert!((qa.multiply(&qb).norm() - 1.0).abs() < 1e-12);
            prop_assert!((qa.boxplus(&Vector3::from(d)).norm() - 1.0).abs() < 1e-12);
            prop_assert!((JplQuaternion::from_rot(&qa.to_rot()).norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn boxplus_composes_to_second_order(d1 in prop::array::uniform3(-1e-3f64..1e-3), d2 in prop::array::uniform3(-1e-3f64..1e-3)) {
            let q = JplQuaternion::new(0.3, -0.2, 0.5, 0.8);
            let a = Vector3::from(d1);
            let b = Vector3::from(d2);
            let joint = q.boxplus(&(a + b)).to_rot();
            let seq = q.boxplus(&a).boxplus(&b).to_rot();
            let err = so3_log(&(joint * seq.transpose())).norm();
            prop_assert!(err <= 2.0 * a.norm() * b.norm() + 1e-15);
        }
    }
}
