use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scan::{LidarPoint, LidarScan};

/// Planar point extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Neighbors on each side of a point used for curvature.
    pub half_window: usize,
    pub curvature_threshold: f64,
    /// Accepted points are at least `nms_radius + 1` ring samples apart.
    pub nms_radius: usize,
    /// Points closer than this to the sensor are ignored.
    pub min_range: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { half_window: 5, curvature_threshold: 0.025, nms_radius: 1, min_range: 0.3 }
    }
}

/// Curvature `|Σ(p_k - p_i)| / (|S|·|p_i|)` over the symmetric window of a
/// ring; `None` near the ring ends.
pub fn ring_curvature(ring: &[LidarPoint], half_window: usize) -> Vec<Option<f64>> {
    let n = ring.len();
    let s = 2 * half_window;
    (0..n)
        .map(|i| {
            if i < half_window || i + half_window >= n {
                return None;
            }
            let pi = ring[i].xyz;
            let sum = (i - half_window..=i + half_window).fold(Vector3::zeros(), |acc, k| acc + (ring[k].xyz - pi));
            Some(sum.norm() / (s as f64 * pi.norm()))
        })
        .collect()
}

/// Low-curvature points of every ring, thinned by non-maximum suppression
/// (lowest curvature wins). Rings shorter than a full window are skipped.
pub fn extract_planar_points(scan: &LidarScan, cfg: &ExtractConfig) -> LidarScan {
    let mut out = LidarScan::empty(scan.rings.len(), scan.sweep_start, scan.sweep_end);
    for (r, ring) in scan.rings.iter().enumerate() {
        if ring.len() < 2 * cfg.half_window + 1 {
            continue;
        }
        let curv = ring_curvature(ring, cfg.half_window);
        let mut cand: Vec<(usize, f64)> = curv
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (i, c)))
            .filter(|&(i, c)| c < cfg.curvature_threshold && ring[i].xyz.norm() >= cfg.min_range)
            .collect();
        cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut blocked = vec![false; ring.len()];
        let mut picked = Vec::new();
        for (i, c) in cand {
            if blocked[i] {
                continue;
            }
            let lo = i.saturating_sub(cfg.nms_radius);
            let hi = (i + cfg.nms_radius).min(ring.len() - 1);
            blocked[lo..=hi].iter_mut().for_each(|b| *b = true);
            let mut p = ring[i];
            p.curvature = c;
            picked.push((i, p));
        }
        picked.sort_by_key(|&(i, _)| i);
        out.rings[r] = picked.into_iter().map(|(_, p)| p).collect();
    }
    out
}
