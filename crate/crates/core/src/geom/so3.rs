use nalgebra::{Matrix3, Vector3};

/// Orthonormal 3×3 rotation matrix with determinant +1.
pub type Rot3 = Matrix3<f64>;

const SMALL_ANGLE: f64 = 1e-7;

/// Skew-symmetric cross-product matrix, `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential, `exp([phi]x)`.
pub fn so3_exp(phi: &Vector3<f64>) -> Rot3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Inverse of [`so3_exp`] for rotation angles in `[0, π]`.
///
/// At exactly π the axis is taken from the column of `(R + I) / 2` with the
/// largest diagonal entry, which makes the branch deterministic.
pub fn so3_log(r: &Rot3) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < SMALL_ANGLE {
        // first-order: R ≈ I + [phi]x
        return 0.5 * w;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        let sym = (r + Matrix3::identity()) * 0.5;
        let mut best = 0;
        for i in 1..3 {
            if sym[(i, i)] > sym[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vector3<f64> = sym.column(best).into();
        axis /= sym[(best, best)].max(0.0).sqrt().max(f64::MIN_POSITIVE);
        axis.normalize_mut();
        // keep the sign consistent with the (tiny) antisymmetric part if any
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / (2.0 * theta.sin()))
}

/// `R·Rᵀ = I` and `det R = +1` within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    (r * r.transpose() - Matrix3::identity()).abs().max() < tol && (r.determinant() - 1.0).abs() < tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        let r = so3_exp(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let dir = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalize();
            let v = dir * rng.random_range(0.0..3.0);
            let r = so3_exp(&v);
            assert!(is_rotation(&r, 1e-12));
            assert_relative_eq!(so3_log(&r), v, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_tiny_angle_uses_taylor_branch() {
        let v = Vector3::new(3e-9, -1e-9, 2e-9);
        assert_relative_eq!(so3_log(&so3_exp(&v)), v, epsilon = 1e-15);
    }

    #[test]
    fn log_at_pi_returns_valid_axis() {
        let v = Vector3::new(0.0, std::f64::consts::PI, 0.0);
        let r = so3_exp(&v);
        let back = so3_log(&r);
        assert_relative_eq!(back.norm(), std::f64::consts::PI, epsilon = 1e-9);
        assert_relative_eq!(so3_exp(&back), r, epsilon = 1e-9);
    }
}
