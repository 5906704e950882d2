use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::gate::{NormalGate, Triangle};
use super::scan::{LidarScan, PointIndex};
use crate::error::{Error, Result};
use crate::geom::Rot3;
use crate::state::{clone_frame, relative_transform, FilterState, Sensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Association distance in meters.
    pub max_distance: f64,
    /// Point noise in meters.
    pub sigma_f: f64,
    /// Chi-square confidence of the normal gate.
    pub confidence: f64,
    /// Frames a track must span before it may become a SLAM plane.
    pub min_slam_frames: usize,
    /// Points of the newest frame carried forward per track.
    pub frontier: usize,
    pub max_tracks: usize,
    pub max_new_tracks: usize,
    /// Seeds are taken every `seed_stride` unused planar points.
    pub seed_stride: usize,
    /// Ring samples inspected on each side of the azimuth search position.
    pub search_width: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_distance: 0.5,
            sigma_f: 0.03,
            confidence: 0.95,
            min_slam_frames: 8,
            frontier: 3,
            max_tracks: 120,
            max_new_tracks: 40,
            seed_stride: 7,
            search_width: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    Tracking,
    Lost,
    /// Continues as a SLAM plane in the state.
    Promoted(u64),
}

#[derive(Debug, Clone)]
struct Frontier {
    p: Vector3<f64>,
    /// Triangle the point belongs to, in the same frame.
    tri: Option<Triangle>,
}

/// A plane feature tracked across LiDAR clones.
#[derive(Debug, Clone)]
pub struct PlaneTrack {
    pub id: u64,
    /// Planar points per clone, oldest clone first.
    pub observations: Vec<(u64, Vec<Vector3<f64>>)>,
    pub status: TrackStatus,
    frontier: Vec<Frontier>,
}

impl PlaneTrack {
    pub fn n_frames(&self) -> usize {
        self.observations.len()
    }

    pub fn n_points(&self) -> usize {
        self.observations.iter().map(|(_, p)| p.len()).sum()
    }

    /// Points observed in `clone_id`.
    pub fn points_in(&self, clone_id: u64) -> Option<&[Vector3<f64>]> {
        self.observations.iter().find(|(c, _)| *c == clone_id).map(|(_, p)| p.as_slice())
    }
}

/// Estimated motion between the previous frame `a` and the new frame `b`:
/// `x_a = rot_ab · x_b + trans_ab`, with the covariance of the rotation error.
#[derive(Debug, Clone, Copy)]
pub struct RelativeMotion {
    pub rot_ab: Rot3,
    pub trans_ab: Vector3<f64>,
    pub p_ori: Matrix3<f64>,
}

impl RelativeMotion {
    pub fn identity() -> Self {
        Self { rot_ab: Rot3::identity(), trans_ab: Vector3::zeros(), p_ori: Matrix3::zeros() }
    }
}

/// Relative LiDAR motion between two clones with the first-order covariance
/// of the relative rotation.
pub fn relative_motion(state: &FilterState, clone_a: u64, clone_b: u64) -> Result<RelativeMotion> {
    let fa = clone_frame(state, Sensor::Lidar, clone_a)?;
    let fb = clone_frame(state, Sensor::Lidar, clone_b)?;
    let (rot_ab, trans_ab) = relative_transform(&fa, &fb);
    // δθ = α_a - R_ab α_b
    let mut h = DMatrix::zeros(3, state.dim());
    let zero = SMatrix::<f64, 3, 3>::zeros();
    fa.map.add_jacobian::<3>(&mut h, 0, &Matrix3::identity(), &zero);
    fb.map.add_jacobian::<3>(&mut h, 0, &(-rot_ab), &zero);
    let p = &h * &state.cov * h.transpose();
    let p_ori = Matrix3::from_fn(|i, j| 0.5 * (p[(i, j)] + p[(j, i)]));
    Ok(RelativeMotion { rot_ab, trans_ab, p_ori })
}

const FREE: usize = usize::MAX;

/// Per-ring azimuth index over a planar scan.
struct RingIndex {
    /// `(azimuth, position in ring)` sorted by azimuth.
    rings: Vec<Vec<(f64, usize)>>,
}

fn azimuth(p: &Vector3<f64>) -> f64 {
    p.y.atan2(p.x)
}

impl RingIndex {
    fn new(scan: &LidarScan) -> Self {
        let rings = scan
            .rings
            .iter()
            .map(|ring| {
                let mut v: Vec<(f64, usize)> = ring.iter().enumerate().map(|(i, p)| (azimuth(&p.xyz), i)).collect();
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
                v
            })
            .collect();
        Self { rings }
    }

    /// Nearest unused point of `ring` to `q`, inspecting `width` samples
    /// around the azimuth of `q` (with wraparound).
    fn nearest_in_ring(
        &self,
        scan: &LidarScan,
        ring: usize,
        q: &Vector3<f64>,
        width: usize,
        skip: &dyn Fn(PointIndex) -> bool,
    ) -> Option<(PointIndex, f64)> {
        let idx = &self.rings[ring];
        let n = idx.len();
        if n == 0 {
            return None;
        }
        let pos = idx.partition_point(|e| e.0 < azimuth(q));
        let mut best: Option<(PointIndex, f64)> = None;
        for off in 0..(2 * width).min(n) {
            let k = (pos + n - width.min(n) + off) % n;
            let pi = (ring, idx[k].1);
            if skip(pi) {
                continue;
            }
            let d = (scan.get(pi).xyz - q).norm();
            if best.is_none_or(|b| d < b.1) {
                best = Some((pi, d));
            }
        }
        best
    }
}

impl RingIndex {
    /// Patch `(j, k, l)` around point `j`: `k` the nearest unused point on the
    /// same ring, `l` the nearest on an adjacent ring. All pairwise distances
    /// among `{q, j, k, l}` must stay below the association distance.
    fn triangle_at(
        &self,
        scan: &LidarScan,
        j: PointIndex,
        q: &Vector3<f64>,
        cfg: &TrackerConfig,
        owner: &[Vec<usize>],
        me: usize,
    ) -> Option<(PointIndex, PointIndex, Triangle)> {
        let pj = scan.get(j).xyz;
        let skip_j = |pi: PointIndex| (owner[pi.0][pi.1] != FREE && owner[pi.0][pi.1] != me) || pi == j;
        let (k, _) = self.nearest_in_ring(scan, j.0, &pj, cfg.search_width, &skip_j)?;
        let (l, _) = [j.0.wrapping_sub(1), j.0 + 1]
            .into_iter()
            .filter(|&r| r < scan.rings.len())
            .filter_map(|r| self.nearest_in_ring(scan, r, &pj, cfg.search_width, &skip_j))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        let tri: Triangle = [pj, scan.get(k).xyz, scan.get(l).xyz];
        let all = [*q, tri[0], tri[1], tri[2]];
        let close = (0..4).all(|a| (a + 1..4).all(|b| (all[a] - all[b]).norm() < cfg.max_distance));
        (close && well_shaped(&tri)).then_some((k, l, tri))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub continued: usize,
    pub lost: usize,
    pub gate_rejections: usize,
    pub seeded: usize,
}

/// Sliding-window plane tracker over deskewed planar scans.
#[derive(Debug, Clone)]
pub struct PlaneTracker {
    pub config: TrackerConfig,
    gate: NormalGate,
    tracks: Vec<PlaneTrack>,
    next_id: u64,
}

impl PlaneTracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        if !(config.max_distance > 0.0) || config.frontier == 0 || config.seed_stride == 0 {
            return Err(Error::Config("tracker needs positive distance, frontier and seed stride".into()));
        }
        let gate = NormalGate::new(config.sigma_f, config.confidence)?;
        Ok(Self { config, gate, tracks: Vec::new(), next_id: 1 })
    }

    pub fn tracks(&self) -> &[PlaneTrack] {
        &self.tracks
    }

    pub fn track(&self, id: u64) -> Option<&PlaneTrack> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn set_status(&mut self, id: u64, status: TrackStatus) {
        if let Some(t) = self.tracks.iter_mut().find(|t| t.id == id) {
            t.status = status;
        }
    }

    /// Associates active tracks with the planar scan of clone `clone_id` and
    /// seeds new tracks from the remaining points.
    pub fn step(&mut self, clone_id: u64, scan: &LidarScan, motion: &RelativeMotion) -> StepReport {
        let cfg = self.config;
        let index = RingIndex::new(scan);
        let mut owner: Vec<Vec<usize>> = scan.rings.iter().map(|r| vec![FREE; r.len()]).collect();
        let mut report = StepReport::default();
        let n_rings = scan.rings.len();
        // Nearest neighbours are reserved for every track before patches are
        // grown, so one track's patch cannot steal another track's match.
        let mut matches: Vec<Vec<(usize, Vector3<f64>, PointIndex)>> = Vec::with_capacity(self.tracks.len());
        for (t, track) in self.tracks.iter().enumerate() {
            let mut m = Vec::new();
            if track.status != TrackStatus::Lost {
                for (f, fp) in track.frontier.iter().enumerate() {
                    let proj = motion.rot_ab.transpose() * (fp.p - motion.trans_ab);
                    let skip = |pi: PointIndex| owner[pi.0][pi.1] != FREE;
                    let j = (0..n_rings)
                        .filter_map(|r| index.nearest_in_ring(scan, r, &proj, cfg.search_width, &skip))
                        .min_by(|a, b| a.1.total_cmp(&b.1));
                    if let Some((j, _)) = j {
                        owner[j.0][j.1] = t;
                        m.push((f, proj, j));
                    }
                }
            }
            matches.push(m);
        }
        for (t, (track, m)) in self.tracks.iter_mut().zip(matches).enumerate() {
            if track.status == TrackStatus::Lost {
                continue;
            }
            let mut next: Vec<Frontier> = Vec::new();
            let mut taken: Vec<PointIndex> = Vec::new();
            for (f, proj, j) in m {
                let fp = &track.frontier[f];
                let accepted = index.triangle_at(scan, j, &proj, &cfg, &owner, t).filter(|(_, _, tri)| match &fp.tri {
                    Some(prev) => {
                        let ok = matches!(self.gate.check(prev, tri, &motion.rot_ab, &motion.p_ori), Ok(g) if g.passed);
                        if !ok {
                            report.gate_rejections += 1;
                        }
                        ok
                    }
                    None => true,
                });
                let Some((k, l, tri)) = accepted else {
                    if !taken.contains(&j) {
                        owner[j.0][j.1] = FREE;
                    }
                    continue;
                };
                for pi in [j, k, l] {
                    owner[pi.0][pi.1] = t;
                    if !taken.contains(&pi) {
                        taken.push(pi);
                    }
                }
                for p in tri {
                    if next.len() < cfg.frontier && !next.iter().any(|q| q.p == p) {
                        next.push(Frontier { p, tri: Some(tri) });
                    }
                }
            }
            if next.is_empty() {
                track.status = TrackStatus::Lost;
                track.frontier.clear();
                report.lost += 1;
            } else {
                track.frontier = next;
                track.observations.push((clone_id, taken.iter().map(|&pi| scan.get(pi).xyz).collect()));
                report.continued += 1;
            }
        }
        let active = self.tracks.iter().filter(|t| t.status != TrackStatus::Lost).count();
        let budget = cfg.max_new_tracks.min(cfg.max_tracks.saturating_sub(active));
        let mut count = 0usize;
        'seed: for (r, ring) in scan.rings.iter().enumerate() {
            for (i, p) in ring.iter().enumerate() {
                if report.seeded >= budget {
                    break 'seed;
                }
                if owner[r][i] != FREE {
                    continue;
                }
                count += 1;
                if !count.is_multiple_of(cfg.seed_stride) {
                    continue;
                }
                // a seed claims a patch formed with its own neighbours
                let seed_owner = self.tracks.len();
                let Some((k, l, tri)) = index.triangle_at(scan, (r, i), &p.xyz, &cfg, &owner, seed_owner) else {
                    continue;
                };
                for pi in [(r, i), k, l] {
                    owner[pi.0][pi.1] = seed_owner;
                }
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(PlaneTrack {
                    id,
                    observations: vec![(clone_id, tri.to_vec())],
                    status: TrackStatus::Tracking,
                    // the gate needs a patch that was itself associated
                    frontier: tri.iter().map(|&p| Frontier { p, tri: None }).collect(),
                });
                report.seeded += 1;
            }
        }
        report
    }

    /// Removes and returns tracks that lost track in the last step.
    pub fn take_lost(&mut self) -> Vec<PlaneTrack> {
        let (lost, keep): (Vec<_>, Vec<_>) = self.tracks.drain(..).partition(|t| t.status == TrackStatus::Lost);
        self.tracks = keep;
        lost
    }

    /// Removes and returns the tracks still tracking that were observed in
    /// `clone_id`.
    pub fn take_observed_in(&mut self, clone_id: u64) -> Vec<PlaneTrack> {
        let (hit, keep): (Vec<_>, Vec<_>) = self.tracks.drain(..).partition(|t| {
            t.status == TrackStatus::Tracking && t.observations.iter().any(|(c, _)| *c == clone_id)
        });
        self.tracks = keep;
        hit
    }

    pub fn remove(&mut self, id: u64) -> Option<PlaneTrack> {
        let pos = self.tracks.iter().position(|t| t.id == id)?;
        Some(self.tracks.remove(pos))
    }

    /// Forgets observations of a marginalized clone; tracks left without
    /// observations are dropped.
    pub fn drop_clone(&mut self, clone_id: u64) {
        for t in &mut self.tracks {
            t.observations.retain(|(c, _)| *c != clone_id);
        }
        self.tracks.retain(|t| !t.observations.is_empty());
    }
}

/// Rejects slivers: the smallest angle of the triangle must exceed ~3°.
fn well_shaped(t: &Triangle) -> bool {
    let e = [t[1] - t[0], t[2] - t[1], t[0] - t[2]];
    let twice_area = e[0].cross(&e[1]).norm();
    let longest = e.iter().map(|v| v.norm()).fold(0.0, f64::max);
    twice_area > 1e-8 && twice_area / (longest * longest) > 0.05
}
