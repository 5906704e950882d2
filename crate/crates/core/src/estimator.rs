//! The sliding-window estimator: IMU propagation, LiDAR plane tracking with
//! MSCKF and SLAM plane updates, and camera point features in both forms.
//!
//! LiDAR scans are cloned at the start of their sweep, deskewed with the
//! propagated IMU poses and tracked against the previous clone. A plane track
//! is used once: when it is lost, or when its oldest clone leaves the window,
//! in which case it may instead become a SLAM plane. Camera features follow
//! the same life cycle with externally associated feature ids.
//!
//! Every block is gated on its own before the accepted ones are stacked into
//! one update per sensor and kind.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::{propagate_mean, ImuNoise, ImuSample, PoseBuffer, Propagator};
use crate::lidar::{
    extract_planar_points, relative_motion, undistort_scan, ExtractConfig, LidarScan, PlaneTracker, RelativeMotion,
    TrackStatus, TrackerConfig,
};
use crate::state::{symmetrize, AnchorMove, FilterState, Sensor};
use crate::update::{
    build_plane_block, build_point_block, chi2_threshold, ekf_update, estimate_track_plane, householder_reduce,
    msckf_nullspace_project, point_nullspace_project, promote_plane, promote_point, slam_plane_system,
    slam_point_system, triangulate, BearingMeasurement, GateDecision, Noise, UpdateKind, UpdateRecord,
};


/// Per-clone planar points of one track.
type TrackObservations = Vec<(u64, Vec<nalgebra::Vector3<f64>>)>;
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub use_lidar: bool,
    pub use_camera: bool,
    pub imu_rate: f64,
    pub noise: ImuNoise,
    /// LiDAR point noise, meters.
    pub sigma_f: f64,
    /// Bearing noise on the normalized image plane.
    pub sigma_uv: f64,
    /// Chi-square confidence of every gate.
    pub confidence: f64,
    /// Features used per image; SLAM points and existing tracks come first.
    pub max_features: usize,
    /// Frames a track needs before it is used as an MSCKF feature.
    pub min_track_frames: usize,
    pub tracker: TrackerConfig,
    pub extract: ExtractConfig,
    pub record_diagnostics: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            use_lidar: true,
            use_camera: true,
            imu_rate: 200.0,
            noise: ImuNoise::default(),
            sigma_f: 0.03,
            sigma_uv: 1.0 / 460.0,
            confidence: 0.95,
            max_features: 40,
            min_track_frames: 3,
            tracker: TrackerConfig::default(),
            extract: ExtractConfig::default(),
            record_diagnostics: false,
        }
    }
}

/// Counters over the lifetime of an estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub lidar_frames: usize,
    pub camera_frames: usize,
    /// Scans whose sweep started before the current filter time.
    pub skipped_scans: usize,
    pub deskew_dropped: usize,
    pub msckf_planes: usize,
    pub slam_plane_updates: usize,
    pub promoted_planes: usize,
    pub msckf_points: usize,
    pub slam_point_updates: usize,
    pub promoted_points: usize,
    /// Blocks rejected by their gate.
    pub gated: usize,
    /// Tracks dropped for a bad fit or a degenerate geometry.
    pub discarded: usize,
}

/// Accepted rows awaiting one stacked update.
struct Stack {
    var: f64,
    blocks: Vec<(DVector<f64>, DMatrix<f64>)>,
}

impl Stack {
    fn new(var: f64) -> Self {
        Self { var, blocks: Vec::new() }
    }

    fn apply(self, state: &mut FilterState) -> Result<()> {
        let m: usize = self.blocks.iter().map(|(r, _)| r.len()).sum();
        if m == 0 {
            return Ok(());
        }
        let n = state.dim();
        let mut r = DVector::zeros(m);
        let mut h = DMatrix::zeros(m, n);
        let mut row = 0;
        for (rb, hb) in &self.blocks {
            r.rows_mut(row, rb.len()).copy_from(rb);
            h.rows_mut(row, rb.len()).copy_from(hb);
            row += rb.len();
        }
        ekf_update(state, &r, &h, &Noise::Isotropic(self.var))
    }
}

/// Gates an isotropic block using only the state columns it touches and
/// compresses it to at most that many rows. The compression is an orthogonal
/// transform, so the information in the kept rows is that of the block.
fn reduce_block(
    cov: &DMatrix<f64>,
    r: &DVector<f64>,
    h: &DMatrix<f64>,
    var: f64,
    confidence: f64,
) -> Result<(GateDecision, DVector<f64>, DMatrix<f64>)> {
    let (m, n) = h.shape();
    let cols: Vec<usize> = (0..n).filter(|&j| h.column(j).iter().any(|v| *v != 0.0)).collect();
    let hs = h.select_columns(&cols);
    let ps = cov.select_rows(&cols).select_columns(&cols);
    let s = &hs * ps * hs.transpose() + DMatrix::identity(m, m) * var;
    let chol = symmetrize(s).cholesky().ok_or_else(|| Error::Singular("innovation covariance".into()))?;
    let nis = r.dot(&chol.solve(r));
    let threshold = chi2_threshold(m, confidence);
    let gate = GateDecision { nis, dof: m, threshold, accepted: nis < threshold };
    let k = cols.len();
    if m <= k {
        return Ok((gate, r.clone(), h.clone()));
    }
    let mut work = DMatrix::zeros(m, k + 1);
    work.columns_mut(0, k).copy_from(&hs);
    work.set_column(k, r);
    householder_reduce(&mut work, k);
    let mut hc = DMatrix::zeros(k, n);
    for (c, &j) in cols.iter().enumerate() {
        hc.view_mut((0, j), (k, 1)).copy_from(&work.view((0, c), (k, 1)));
    }
    Ok((gate, work.view((0, k), (k, 1)).column(0).into_owned(), hc))
}

/// Samples covering `[t0, t1]` including the bracketing ones.
fn sample_window(samples: &[ImuSample], t0: f64, t1: f64) -> &[ImuSample] {
    let a = samples.partition_point(|s| s.stamp <= t0).saturating_sub(1);
    let b = (samples.partition_point(|s| s.stamp < t1) + 1).min(samples.len());
    &samples[a..b.max(a)]
}

pub struct Estimator {
    pub config: EstimatorConfig,
    state: FilterState,
    propagator: Propagator,
    imu: Vec<ImuSample>,
    tracker: PlaneTracker,
    /// Open camera tracks by feature id.
    features: BTreeMap<usize, Vec<BearingMeasurement>>,
    /// Feature id to SLAM point id.
    slam_points: BTreeMap<usize, u64>,
    last_lidar_clone: Option<u64>,
    stats: EstimatorStats,
    diagnostics: Vec<UpdateRecord>,
}

impl Estimator {
    pub fn new(state: FilterState, config: EstimatorConfig) -> Result<Self> {
        if !(config.sigma_f > 0.0 && config.sigma_uv > 0.0) {
            return Err(Error::Config("measurement noise must be positive".into()));
        }
        if !(config.confidence > 0.0 && config.confidence < 1.0) {
            return Err(Error::Config("gate confidence must lie in (0, 1)".into()));
        }
        let tracker = PlaneTracker::new(TrackerConfig { sigma_f: config.sigma_f, ..config.tracker })?;
        Ok(Self {
            propagator: Propagator::new(config.noise, config.imu_rate),
            config,
            state,
            imu: Vec::new(),
            tracker,
            features: BTreeMap::new(),
            slam_points: BTreeMap::new(),
            last_lidar_clone: None,
            stats: EstimatorStats::default(),
            diagnostics: Vec::new(),
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn stats(&self) -> EstimatorStats {
        self.stats
    }

    pub fn tracker(&self) -> &PlaneTracker {
        &self.tracker
    }

    /// Update records collected since the last call.
    pub fn take_diagnostics(&mut self) -> Vec<UpdateRecord> {
        std::mem::take(&mut self.diagnostics)
    }

    /// Appends IMU samples; stamps must continue the stream.
    pub fn feed_imu(&mut self, samples: &[ImuSample]) -> Result<()> {
        let mut last = self.imu.last().map(|s| s.stamp);
        for (i, s) in samples.iter().enumerate() {
            if last.is_some_and(|l| !(s.stamp > l)) {
                return Err(Error::NonMonotone { index: i });
            }
            last = Some(s.stamp);
        }
        // keep a little history for interpolation at the filter time
        let keep_from = self.imu.partition_point(|s| s.stamp < self.state.time - 1.0);
        if keep_from > 4096 {
            self.imu.drain(..keep_from);
        }
        self.imu.extend_from_slice(samples);
        Ok(())
    }

    fn imu_window(&self, t0: f64, t1: f64) -> &[ImuSample] {
        sample_window(&self.imu, t0, t1)
    }

    /// Propagates to `t`, or stays put when `t` is not ahead of the filter.
    pub fn propagate_to(&mut self, t: f64) -> Result<()> {
        if t > self.state.time {
            let samples = sample_window(&self.imu, self.state.time, t);
            self.propagator.propagate(&mut self.state, samples, t)?;
        }
        Ok(())
    }

    fn record(&mut self, kind: UpdateKind, id: u64, r: &DVector<f64>, gate: &GateDecision) {
        if !gate.accepted {
            self.stats.gated += 1;
        }
        if self.config.record_diagnostics {
            self.diagnostics.push(UpdateRecord::from_gate(self.state.time, kind, id, r.norm(), gate));
        }
    }

    /// Gates a block and queues it when accepted.
    fn queue(&mut self, stack: &mut Stack, kind: UpdateKind, id: u64, r: DVector<f64>, h: DMatrix<f64>) -> Result<bool> {
        let (gate, rc, hc) = reduce_block(&self.state.cov, &r, &h, stack.var, self.config.confidence)?;
        self.record(kind, id, &r, &gate);
        if gate.accepted {
            stack.blocks.push((rc, hc));
        }
        Ok(gate.accepted)
    }

    /// Processes one LiDAR sweep stamped on the sensor clock.
    pub fn process_lidar(&mut self, scan: &LidarScan) -> Result<()> {
        if !self.config.use_lidar {
            return Ok(());
        }
        let td = self.state.calib_lidar.td;
        let t = scan.sweep_start + td;
        if t < self.state.time {
            self.stats.skipped_scans += 1;
            return Ok(());
        }
        self.propagate_to(t)?;
        let clone_id = self.state.clone_pose(Sensor::Lidar, t)?;
        self.stats.lidar_frames += 1;

        let t_end = (scan.sweep_end + td).max(t);
        let (_, poses) = propagate_mean(&self.state.imu, self.imu_window(t, t_end), t, t_end, &self.config.noise.gravity)?;
        let mut buffer = PoseBuffer::new(2.0 * (t_end - t) + 1.0);
        buffer.extend(poses)?;
        let und = undistort_scan(scan, &buffer, &self.state.calib_lidar)?;
        self.stats.deskew_dropped += und.dropped;
        let planar = extract_planar_points(&und.scan, &self.config.extract);
        let motion = match self.last_lidar_clone {
            Some(prev) if self.state.lidar_clones.get(prev).is_some() => relative_motion(&self.state, prev, clone_id)?,
            _ => RelativeMotion::identity(),
        };
        self.last_lidar_clone = Some(clone_id);
        self.tracker.step(clone_id, &planar, &motion);

        self.slam_plane_updates(clone_id)?;

        let mut candidates = Vec::new();
        for track in self.tracker.take_lost() {
            match track.status {
                TrackStatus::Promoted(pid) => {
                    self.state.remove_plane(pid)?;
                }
                _ if track.n_frames() >= self.config.min_track_frames => candidates.push((track.id, track.observations)),
                _ => {}
            }
        }
        let oldest = self.state.lidar_clones.oldest().map(|c| c.id).filter(|_| self.state.lidar_clones.is_full());
        if let Some(oldest) = oldest {
            let leaving: Vec<u64> = self
                .tracker
                .tracks()
                .iter()
                .filter(|t| t.status == TrackStatus::Tracking && t.points_in(oldest).is_some())
                .map(|t| t.id)
                .collect();
            for id in leaving {
                if !self.try_promote_plane(id)? {
                    let track = self.tracker.remove(id).expect("listed above");
                    candidates.push((track.id, track.observations));
                }
            }
        }
        self.msckf_plane_updates(&candidates)?;
        if let Some(oldest) = oldest {
            self.retire_lidar_clone(oldest)?;
        }
        Ok(())
    }

    fn slam_plane_updates(&mut self, clone_id: u64) -> Result<()> {
        let var = self.config.sigma_f * self.config.sigma_f;
        let mut stack = Stack::new(var);
        let observed: Vec<(u64, Vec<_>)> = self
            .tracker
            .tracks()
            .iter()
            .filter_map(|t| match t.status {
                TrackStatus::Promoted(pid) => t.points_in(clone_id).map(|p| (pid, p.to_vec())),
                _ => None,
            })
            .collect();
        let mut rejected = Vec::new();
        for (pid, points) in observed {
            let (r, h) = slam_plane_system(&self.state, pid, &[(clone_id, points)], self.config.sigma_f)?;
            if self.queue(&mut stack, UpdateKind::SlamPlane, pid, r, h)? {
                self.stats.slam_plane_updates += 1;
            } else {
                rejected.push(pid);
            }
        }
        stack.apply(&mut self.state)?;
        // a track that fails against its own plane has usually crept onto a
        // neighbouring surface
        for pid in rejected {
            self.drop_slam_plane(pid)?;
        }
        Ok(())
    }

    /// Promotes a track with a full window when the budget allows. Returns
    /// whether the track stays in the tracker as a SLAM plane.
    fn try_promote_plane(&mut self, track_id: u64) -> Result<bool> {
        let track = self.tracker.track(track_id).expect("track present");
        if track.n_frames() < self.tracker.config.min_slam_frames
            || self.state.planes.len() >= self.state.config.max_slam_planes
        {
            return Ok(false);
        }
        let observations = track.observations.clone();
        let (plane, fit) = match estimate_track_plane(&self.state, &observations) {
            Ok(v) => v,
            Err(Error::Singular(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        if !fit.consistent(self.config.sigma_f) {
            return Ok(false);
        }
        let block = build_plane_block(&self.state, &plane, &observations, self.config.sigma_f)?;
        match promote_plane(&mut self.state, &block, self.config.confidence) {
            Ok((Some(pid), gate)) => {
                self.record(UpdateKind::PlanePromotion, track_id, &block.r, &gate);
                self.tracker.set_status(track_id, TrackStatus::Promoted(pid));
                self.stats.promoted_planes += 1;
                Ok(true)
            }
            Ok((None, gate)) => {
                self.record(UpdateKind::PlanePromotion, track_id, &block.r, &gate);
                Ok(false)
            }
            // too close to an existing plane or to the anchor origin
            Err(Error::Rejected(_) | Error::Singular(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn msckf_plane_updates(&mut self, candidates: &[(u64, TrackObservations)]) -> Result<()> {
        let mut stack = Stack::new(self.config.sigma_f * self.config.sigma_f);
        for (id, observations) in candidates {
            let (plane, fit) = match estimate_track_plane(&self.state, observations) {
                Ok(v) => v,
                Err(Error::Singular(_) | Error::Precondition(_)) => {
                    self.stats.discarded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !fit.consistent(self.config.sigma_f) || plane.distance() < self.state.config.d_min {
                self.stats.discarded += 1;
                continue;
            }
            let block = build_plane_block(&self.state, &plane, observations, self.config.sigma_f)?;
            if block.rows() <= 3 {
                self.stats.discarded += 1;
                continue;
            }
            let proj = msckf_nullspace_project(&block)?;
            if self.queue(&mut stack, UpdateKind::MsckfPlane, *id, proj.r, proj.h_x)? {
                self.stats.msckf_planes += 1;
            }
        }
        stack.apply(&mut self.state)
    }

    /// Moves anchors off the oldest clone and marginalizes it.
    fn retire_lidar_clone(&mut self, oldest: u64) -> Result<()> {
        let newest = self.state.lidar_clones.newest().expect("window is full").id;
        let anchored: Vec<u64> = self.state.planes.iter().filter(|p| p.plane.anchor_id == oldest).map(|p| p.id).collect();
        for pid in anchored {
            if self.state.move_anchor(pid, newest)? == AnchorMove::BelowMinimum {
                self.drop_slam_plane(pid)?;
            }
        }
        self.tracker.drop_clone(oldest);
        self.state.marginalize_clone(Sensor::Lidar, oldest)?;
        let live: Vec<u64> = self
            .tracker
            .tracks()
            .iter()
            .filter_map(|t| match t.status {
                TrackStatus::Promoted(pid) => Some(pid),
                _ => None,
            })
            .collect();
        let orphans: Vec<u64> = self.state.planes.iter().map(|p| p.id).filter(|id| !live.contains(id)).collect();
        for pid in orphans {
            self.state.remove_plane(pid)?;
        }
        Ok(())
    }

    fn drop_slam_plane(&mut self, pid: u64) -> Result<()> {
        let track = self.tracker.tracks().iter().find(|t| t.status == TrackStatus::Promoted(pid)).map(|t| t.id);
        if let Some(id) = track {
            self.tracker.remove(id);
        }
        self.state.remove_plane(pid)?;
        Ok(())
    }

    /// Processes one image stamped on the sensor clock with associated
    /// features `(id, normalized coordinates)`.
    pub fn process_camera(&mut self, stamp: f64, features: &[(usize, Vector2<f64>)]) -> Result<()> {
        if !self.config.use_camera {
            return Ok(());
        }
        let t = (stamp + self.state.calib_cam.td).max(self.state.time);
        self.propagate_to(t)?;
        self.stats.camera_frames += 1;
        if self.state.cam_clones.is_full() {
            self.retire_camera_clone()?;
        }
        let clone_id = self.state.clone_pose(Sensor::Camera, t)?;
        let sigma = self.config.sigma_uv;
        let selected = self.select_features(features);

        let seen: BTreeMap<usize, Vector2<f64>> = selected.iter().copied().collect();
        let mut stack = Stack::new(sigma * sigma);
        let unseen: Vec<usize> = self.slam_points.keys().copied().filter(|f| !seen.contains_key(f)).collect();
        for fid in unseen {
            let pid = self.slam_points.remove(&fid).expect("listed above");
            self.state.remove_point(pid)?;
        }
        let slam: Vec<(usize, u64)> = self.slam_points.iter().map(|(f, p)| (*f, *p)).collect();
        for (fid, pid) in slam {
            let uv = seen[&fid];
            let obs = [BearingMeasurement::new(clone_id, uv, sigma)];
            let (r, h, _) = match slam_point_system(&self.state, pid, &obs) {
                Ok(v) => v,
                Err(Error::Singular(_)) => continue,
                Err(e) => return Err(e),
            };
            if self.queue(&mut stack, UpdateKind::SlamPoint, pid, r, h)? {
                self.stats.slam_point_updates += 1;
            }
        }
        stack.apply(&mut self.state)?;

        let lost: Vec<usize> = self.features.keys().copied().filter(|f| !seen.contains_key(f)).collect();
        let mut candidates = Vec::new();
        for fid in lost {
            let obs = self.features.remove(&fid).expect("listed above");
            if obs.len() >= self.config.min_track_frames {
                candidates.push((fid, obs));
            }
        }
        for (fid, uv) in &selected {
            if self.slam_points.contains_key(fid) {
                continue;
            }
            self.features.entry(*fid).or_default().push(BearingMeasurement::new(clone_id, *uv, sigma));
        }
        self.msckf_point_updates(&candidates)
    }

    /// SLAM points first, then continuing tracks, then new features.
    fn select_features(&self, features: &[(usize, Vector2<f64>)]) -> Vec<(usize, Vector2<f64>)> {
        let rank = |f: &usize| {
            if self.slam_points.contains_key(f) {
                0
            } else if self.features.contains_key(f) {
                1
            } else {
                2
            }
        };
        let mut out: Vec<(usize, Vector2<f64>)> = features.to_vec();
        out.sort_by_key(|(f, _)| rank(f));
        out.truncate(self.config.max_features);
        out.sort_by_key(|(f, _)| *f);
        out
    }

    /// Uses or promotes the tracks seen by the oldest camera clone, then
    /// marginalizes it.
    fn retire_camera_clone(&mut self) -> Result<()> {
        let oldest = self.state.cam_clones.oldest().expect("window is full").id;
        let leaving: Vec<usize> =
            self.features.iter().filter(|(_, obs)| obs.iter().any(|o| o.clone_id == oldest)).map(|(f, _)| *f).collect();
        let mut candidates = Vec::new();
        for fid in leaving {
            let obs = self.features.remove(&fid).expect("listed above");
            if self.state.points.len() < self.state.config.max_slam_points && obs.len() >= self.state.cam_clones.max {
                match promote_point(&mut self.state, &obs, self.config.confidence) {
                    Ok((Some(pid), gate)) => {
                        self.record(UpdateKind::PointPromotion, fid as u64, &DVector::zeros(0), &gate);
                        self.slam_points.insert(fid, pid);
                        self.stats.promoted_points += 1;
                        continue;
                    }
                    Ok((None, gate)) => {
                        self.record(UpdateKind::PointPromotion, fid as u64, &DVector::zeros(0), &gate);
                        continue;
                    }
                    Err(Error::Singular(_) | Error::Rejected(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if obs.len() >= self.config.min_track_frames {
                candidates.push((fid, obs));
            }
        }
        self.msckf_point_updates(&candidates)?;
        self.state.marginalize_clone(Sensor::Camera, oldest)?;
        Ok(())
    }

    fn msckf_point_updates(&mut self, candidates: &[(usize, Vec<BearingMeasurement>)]) -> Result<()> {
        let sigma = self.config.sigma_uv;
        let mut stack = Stack::new(sigma * sigma);
        for (fid, obs) in candidates {
            let built = triangulate(&self.state, obs).and_then(|p| build_point_block(&self.state, &p, obs));
            let block = match built {
                Ok(b) => b,
                Err(Error::Singular(_)) => {
                    self.stats.discarded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let proj = point_nullspace_project(&block)?;
            if self.queue(&mut stack, UpdateKind::MsckfPoint, *fid as u64, proj.r, proj.h_x)? {
                self.stats.msckf_points += 1;
            }
        }
        stack.apply(&mut self.state)
    }
}
