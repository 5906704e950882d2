use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bounded planar rectangle `origin + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Patch {
    /// Edges must be orthogonal and non-degenerate.
    pub fn new(origin: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>) -> Result<Self> {
        let n = edge_u.cross(&edge_v);
        if n.norm() < 1e-9 || edge_u.dot(&edge_v).abs() > 1e-9 * edge_u.norm() * edge_v.norm() {
            return Err(Error::Config("patch edges must be orthogonal and non-zero".into()));
        }
        Ok(Self { origin, edge_u, edge_v, normal: n.normalize() })
    }

    pub fn corners(&self) -> [Vector3<f64>; 4] {
        let o = self.origin;
        [o, o + self.edge_u, o + self.edge_u + self.edge_v, o + self.edge_v]
    }

    /// Plane `nᵀx = d` carrying the patch.
    pub fn plane(&self) -> (Vector3<f64>, f64) {
        (self.normal, self.normal.dot(&self.origin))
    }

    /// Ray parameter of the hit with the bounded patch.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let den = self.normal.dot(dir);
        if den.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.origin - origin)) / den;
        if t <= 1e-9 {
            return None;
        }
        let rel = origin + dir * t - self.origin;
        let s = rel.dot(&self.edge_u) / self.edge_u.norm_squared();
        let u = rel.dot(&self.edge_v) / self.edge_v.norm_squared();
        ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&u)).then_some(t)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        self.origin + self.edge_u * rng.random::<f64>() + self.edge_v * rng.random::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.edge_u.cross(&self.edge_v).norm()
    }
}

/// Bounded planar structure in the global frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub patches: Vec<Patch>,
    pub gravity: Vector3<f64>,
}

impl WorldModel {
    pub fn new(patches: Vec<Patch>, gravity: Vector3<f64>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Config("world needs at least one patch".into()));
        }
        Ok(Self { patches, gravity })
    }

    /// A 10 m × 10 m × 3 m box centered on the origin in x and y with its
    /// floor at z = 0, plus two interior wall panels.
    pub fn room() -> Self {
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        let h = 3.0;
        let c = |a: f64, b: f64, c: f64| Vector3::new(a, b, c);
        let patches = vec![
            Patch::new(c(-5.0, -5.0, 0.0), x * 10.0, y * 10.0),
            Patch::new(c(-5.0, -5.0, h), y * 10.0, x * 10.0),
            Patch::new(c(-5.0, -5.0, 0.0), z * h, x * 10.0),
            Patch::new(c(-5.0, 5.0, 0.0), x * 10.0, z * h),
            Patch::new(c(-5.0, -5.0, 0.0), y * 10.0, z * h),
            Patch::new(c(5.0, -5.0, 0.0), z * h, y * 10.0),
            // a slanted panel across the (-x, +y) corner
            Patch::new(c(-5.0, 2.0, 0.0), c(3.0, 3.0, 0.0), z * h),
            // a free-standing partition near the -y wall
            Patch::new(c(1.0, -3.8, 0.0), x * 3.0, z * 2.0),
        ];
        Self::new(patches.into_iter().collect::<Result<Vec<_>>>().expect("room patches are valid"), Vector3::new(0.0, 0.0, -9.81))
            .expect("room is non-empty")
    }

    /// Nearest hit: patch index and range.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<(usize, f64)> {
        self.patches
            .iter()
            .enumerate()
            .filter_map(|(k, p)| p.intersect(origin, dir).map(|t| (k, t)))
            .filter(|&(_, t)| t <= max_range)
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// `n` points spread over the patches proportionally to their area.
    pub fn sample_landmarks<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Vector3<f64>> {
        let areas: Vec<f64> = self.patches.iter().map(Patch::area).collect();
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut pick = rng.random::<f64>() * total;
                let mut k = 0;
                while k + 1 < areas.len() && pick > areas[k] {
                    pick -= areas[k];
                    k += 1;
                }
                self.patches[k].sample(rng)
            })
            .collect()
    }
}
