use nalgebra::{Matrix3, SMatrix, Vector3};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::geom::{skew, Rot3};

pub type Triangle = [Vector3<f64>; 3];

/// Unnormalized normal `(p1 - p0) × (p2 - p0)` and its 3×9 Jacobian with
/// respect to the stacked vertices.
pub fn triangle_normal(t: &Triangle) -> (Vector3<f64>, SMatrix<f64, 3, 9>) {
    let a = t[1] - t[0];
    let b = t[2] - t[0];
    let n = a.cross(&b);
    let mut jac = SMatrix::<f64, 3, 9>::zeros();
    jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(skew(&b) - skew(&a)));
    jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&b)));
    jac.fixed_view_mut::<3, 3>(0, 6).copy_from(&skew(&a));
    (n, jac)
}

/// Parallelism residual `z = n₁ × (R n₂)` between triangle `a` and triangle
/// `b` rotated into frame `a`, with its Jacobians.
#[derive(Debug, Clone, Copy)]
pub struct NormalResidual {
    pub z: Vector3<f64>,
    pub d_tri_a: SMatrix<f64, 3, 9>,
    pub d_tri_b: SMatrix<f64, 3, 9>,
    /// With respect to `δθ` in `R = (I - [δθ]x) R̂`.
    pub d_theta: Matrix3<f64>,
}

pub fn normal_residual(tri_a: &Triangle, tri_b: &Triangle, rel_rot: &Rot3) -> NormalResidual {
    let (n1, j1) = triangle_normal(tri_a);
    let (n2, j2) = triangle_normal(tri_b);
    let m = rel_rot * n2;
    NormalResidual {
        z: n1.cross(&m),
        d_tri_a: -skew(&m) * j1,
        d_tri_b: skew(&n1) * rel_rot * j2,
        d_theta: skew(&n1) * skew(&m),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateOutcome {
    pub passed: bool,
    /// Mahalanobis distance of the residual.
    pub d_z: f64,
    pub z: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Chi-square gate on plane-normal parallelism.
#[derive(Debug, Clone, Copy)]
pub struct NormalGate {
    pub sigma_f: f64,
    pub threshold: f64,
}

const MIN_AREA: f64 = 1e-8;

impl NormalGate {
    /// Gate with the 3-dof chi-square quantile at `confidence`.
    pub fn new(sigma_f: f64, confidence: f64) -> Result<Self> {
        if !(sigma_f > 0.0) || !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::Config("normal gate needs sigma_f > 0 and confidence in (0, 1)".into()));
        }
        let chi = ChiSquared::new(3.0).expect("valid dof");
        Ok(Self { sigma_f, threshold: chi.inverse_cdf(confidence) })
    }

    /// `rel_rot` maps frame-`b` vectors into frame `a`; `p_ori` is the
    /// covariance of its error.
    pub fn check(&self, tri_a: &Triangle, tri_b: &Triangle, rel_rot: &Rot3, p_ori: &Matrix3<f64>) -> Result<GateOutcome> {
        for t in [tri_a, tri_b] {
            let area = 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
            if !(area > MIN_AREA) {
                return Err(Error::Singular(format!("degenerate triangle, area {area:e}")));
            }
        }
        let r = normal_residual(tri_a, tri_b, rel_rot);
        let s2 = self.sigma_f * self.sigma_f;
        let cov = r.d_tri_a * r.d_tri_a.transpose() * s2
            + r.d_tri_b * r.d_tri_b.transpose() * s2
            + r.d_theta * p_ori * r.d_theta.transpose();
        let cov = (cov + cov.transpose()) * 0.5;
        let eig = cov.symmetric_eigen();
        let lmax = eig.eigenvalues.max();
        if !(lmax > 0.0) {
            return Err(Error::Singular("normal residual covariance vanishes".into()));
        }
        // Exactly parallel normals leave the direction of n₁ without
        // uncertainty; the residual has no component there either.
        let mut d_z = 0.0;
        let mut rank = 0;
        for k in 0..3 {
            let l = eig.eigenvalues[k];
            if l > 1e-10 * lmax {
                let c = eig.eigenvectors.column(k).dot(&r.z);
                d_z += c * c / l;
                rank += 1;
            }
        }
        if rank < 2 {
            return Err(Error::Singular(format!("normal residual covariance has rank {rank}")));
        }
        Ok(GateOutcome { passed: d_z < self.threshold, d_z, z: r.z, cov })
    }
}
