use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::Rot3;

/// Points of one frame plus the transform into the anchor frame,
/// `w = rot · q + trans`.
#[derive(Debug, Clone)]
pub struct FrameObservation {
    pub rot: Rot3,
    pub trans: Vector3<f64>,
    pub points: Vec<Vector3<f64>>,
}

impl FrameObservation {
    pub fn identity(points: Vec<Vector3<f64>>) -> Self {
        Self { rot: Rot3::identity(), trans: Vector3::zeros(), points }
    }
}

#[derive(Debug, Clone)]
pub struct PlaneFit {
    /// Closest point of the plane to the anchor origin.
    pub cp: Vector3<f64>,
    /// Signed point-to-plane distances at the solution.
    pub residuals: Vec<f64>,
    pub rms: f64,
    pub iterations: usize,
}

impl PlaneFit {
    /// Whether the residuals are explained by point noise `sigma_f`.
    pub fn consistent(&self, sigma_f: f64) -> bool {
        self.rms <= 3.0 * sigma_f
    }
}

/// Scatter eigenvalue ratio beyond which the points are treated as
/// collinear.
const MAX_CONDITION: f64 = 1e8;
const MAX_FAILED_STEPS: usize = 5;
const MAX_ITERATIONS: usize = 50;

fn residual_and_jacobian(cp: &Vector3<f64>, w: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = cp.norm();
    let n = cp / d;
    let proj = (Matrix3::identity() - n * n.transpose()) / d;
    (n.dot(w) - d, proj * w - n)
}

fn cost(cp: &Vector3<f64>, pts: &[Vector3<f64>]) -> f64 {
    pts.iter().map(|w| residual_and_jacobian(cp, w).0.powi(2)).sum()
}

/// Fits a closest-point plane in the anchor frame: a total-least-squares
/// seed followed by damped Gauss-Newton on the closest point.
pub fn init_plane(obs: &[FrameObservation]) -> Result<PlaneFit> {
    let pts: Vec<Vector3<f64>> = obs.iter().flat_map(|o| o.points.iter().map(|q| o.rot * q + o.trans)).collect();
    if pts.len() < 3 {
        return Err(Error::Precondition(format!("plane fit needs 3 points, got {}", pts.len())));
    }
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let scatter = pts.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l_mid > 0.0) || l_max / l_mid > MAX_CONDITION {
        return Err(Error::Singular(format!("plane points nearly collinear (eigenvalues {l_mid:e}, {l_max:e})")));
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let mut d = n.dot(&centroid);
    if d < 0.0 {
        n = -n;
        d = -d;
    }
    if d < 1e-9 {
        return Err(Error::Singular("plane passes through the anchor origin".into()));
    }
    let mut cp = n * d;
    let mut c = cost(&cp, &pts);
    let mut lambda = 1e-9;
    let mut failed = 0;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut hess = Matrix3::zeros();
        let mut grad = Vector3::zeros();
        for w in &pts {
            let (r, j) = residual_and_jacobian(&cp, w);
            hess += j * j.transpose();
            grad += j * r;
        }
        let damped = hess + Matrix3::from_diagonal(&hess.diagonal()) * lambda;
        let step = damped
            .cholesky()
            .ok_or_else(|| Error::Singular("plane normal equations not positive definite".into()))?
            .solve(&(-grad));
        if step.norm() < 1e-14 * (1.0 + cp.norm()) {
            break;
        }
        let trial = cp + step;
        let c_new = cost(&trial, &pts);
        if c_new <= c {
            let converged = c - c_new <= 1e-15 * c.max(f64::MIN_POSITIVE) || step.norm() < 1e-12 * cp.norm();
            cp = trial;
            c = c_new;
            lambda = (lambda * 0.1).max(1e-12);
            failed = 0;
            if converged {
                break;
            }
        } else {
            // at the optimum the predicted decrease is at rounding level
            let predicted = -grad.dot(&step);
            if predicted <= 1e-14 * c {
                break;
            }
            failed += 1;
            if failed >= MAX_FAILED_STEPS {
                return Err(Error::Singular(format!("plane refinement diverged after {iterations} iterations")));
            }
            lambda *= 10.0;
        }
    }
    let residuals: Vec<f64> = pts.iter().map(|w| residual_and_jacobian(&cp, w).0).collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(PlaneFit { cp, residuals, rms, iterations })
}
