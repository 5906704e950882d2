use std::io::Write;

use nalgebra::{DMatrix, Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Mode, SimConfig};
use super::metrics::{compute_metrics, orientation_error, Alignment, EvalSample, RunMetrics};
use super::sensors::{imu_pose, sim_camera, sim_imu, sim_lidar, CameraFrame, CameraModel, LidarModel, Rig};
use super::trajgen::gen_trajectory;
use super::world::WorldModel;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorConfig, EstimatorStats};
use crate::geom::{JplQuaternion, Pose};
use crate::imu::ImuNoise;
use crate::lidar::{LidarScan, TrackerConfig};
use crate::state::{calib_idx, calib_index, imu_idx, CalibState, FilterState, ImuCoreState, Sensor, StateConfig};
use crate::update::UpdateRecord;

/// Position error at which a run counts as diverged.
pub const DIVERGENCE_M: f64 = 100.0;

/// Noise floors the estimator assumes when the simulated sensors are
/// noise-free, so every innovation covariance stays positive definite.
pub const MIN_POINT_SIGMA: f64 = 1e-3;
pub const MIN_PIXEL_SIGMA: f64 = 0.05;

/// Independent random streams of one run, so that e.g. the calibration
/// perturbation does not shift the sensor noise between modes.
mod stream {
    pub const IMU: u64 = 1;
    pub const LIDAR: u64 = 2;
    pub const CAMERA: u64 = 3;
    pub const PRIOR: u64 = 4;
    pub const LANDMARKS: u64 = 5;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = gauss3(rng);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Calibration estimate and its error against the truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibRecord {
    pub stamp: f64,
    /// Standard deviations of `(θ, p, td)` of the LiDAR calibration.
    pub sigma: [f64; 7],
    /// Estimate minus truth, rotation as `δθ`.
    pub error: [f64; 7],
}

/// Everything produced by one simulated run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub mode: Mode,
    pub samples: Vec<EvalSample>,
    pub calibration: Vec<CalibRecord>,
    pub stats: EstimatorStats,
    pub diagnostics: Vec<UpdateRecord>,
    /// Set when the run diverged or the estimator failed.
    pub failure: Option<String>,
}

impl RunOutput {
    pub fn metrics(&self) -> Result<RunMetrics> {
        compute_metrics(&self.samples, Alignment::YawPosition)
    }

    /// Per-step CSV: stamp, true pose, estimated pose (JPL quaternion
    /// `x y z w` and position), and the covariance diagonal of the
    /// orientation and position errors.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "stamp,true_qx,true_qy,true_qz,true_qw,true_px,true_py,true_pz,\
             est_qx,est_qy,est_qz,est_qw,est_px,est_py,est_pz,\
             var_thx,var_thy,var_thz,var_px,var_py,var_pz"
        )?;
        for s in &self.samples {
            let mut row = vec![s.stamp];
            for pose in [&s.truth, &s.estimate] {
                row.extend(pose.orientation.as_array());
                row.extend(pose.position.iter());
            }
            row.extend((0..6).map(|i| s.cov[(i, i)]));
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Estimator settings implied by a configuration and mode.
pub fn estimator_config(cfg: &SimConfig, mode: Mode) -> EstimatorConfig {
    EstimatorConfig {
        use_lidar: mode.uses_lidar(),
        use_camera: mode.uses_camera(),
        imu_rate: cfg.imu_freq,
        noise: imu_noise(cfg),
        sigma_f: cfg.lidar_point_noise.max(MIN_POINT_SIGMA),
        sigma_uv: cfg.pixel_proj.max(MIN_PIXEL_SIGMA) / cfg.cam_focal,
        confidence: cfg.gate_confidence,
        max_features: cfg.max_features,
        tracker: TrackerConfig { sigma_f: cfg.lidar_point_noise.max(MIN_POINT_SIGMA), confidence: cfg.gate_confidence, ..TrackerConfig::default() },
        ..EstimatorConfig::default()
    }
}

pub fn imu_noise(cfg: &SimConfig) -> ImuNoise {
    ImuNoise {
        sigma_g: cfg.gyro_white_noise,
        sigma_wg: cfg.gyro_rand_walk,
        sigma_a: cfg.accel_white_noise,
        sigma_wa: cfg.accel_rand_walk,
        gravity: WorldModel::room().gravity,
    }
}

/// Initial calibration estimate: the truth, or the truth perturbed by the
/// configured magnitudes in random directions with the offset estimate at
/// zero.
fn initial_calib<R: Rng>(truth: &CalibState, cfg: &SimConfig, perturbed: bool, rng: &mut R) -> CalibState {
    if !perturbed {
        return *truth;
    }
    let dtheta = random_unit(rng) * cfg.rot_ltoi;
    CalibState {
        q_si: truth.q_si.boxplus(&dtheta),
        p_si: truth.p_si + random_unit(rng) * cfg.pos_iinl,
        td: truth.td - cfg.timeoff,
    }
}

fn initial_cov(cfg: &SimConfig, calibrate: bool) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(29, 29);
    let mut blocks = vec![
        (imu_idx::THETA, 3, cfg.init_sigma_theta),
        (imu_idx::BG, 3, cfg.init_sigma_bg),
        (imu_idx::V, 3, cfg.init_sigma_velocity),
        (imu_idx::BA, 3, cfg.init_sigma_ba),
        (imu_idx::P, 3, cfg.init_sigma_position),
    ];
    if calibrate {
        for sensor in [Sensor::Camera, Sensor::Lidar] {
            let base = calib_index(sensor);
            blocks.push((base + calib_idx::THETA, 3, cfg.rot_ltoi));
            blocks.push((base + calib_idx::P, 3, cfg.pos_iinl));
            blocks.push((base + calib_idx::TD, 1, cfg.timeoff));
        }
    }
    for (at, k, sigma) in blocks {
        for i in at..at + k {
            p[(i, i)] = sigma * sigma;
        }
    }
    p
}

fn calib_record(state: &FilterState, truth: &CalibState) -> CalibRecord {
    let est = &state.calib_lidar;
    let base = calib_index(Sensor::Lidar);
    let mut sigma = [0.0; 7];
    for (i, s) in sigma.iter_mut().enumerate() {
        *s = state.cov[(base + i, base + i)].max(0.0).sqrt();
    }
    let dth = -orientation_error(&truth.q_si.to_rot(), &est.q_si.to_rot());
    let dp = est.p_si - truth.p_si;
    CalibRecord {
        stamp: state.time,
        sigma,
        error: [dth.x, dth.y, dth.z, dp.x, dp.y, dp.z, est.td - truth.td],
    }
}

fn eval_sample(state: &FilterState, truth: Pose) -> EvalSample {
    let mut cov = Matrix6::zeros();
    for (bi, i) in [imu_idx::THETA, imu_idx::P].into_iter().enumerate() {
        for (bj, j) in [imu_idx::THETA, imu_idx::P].into_iter().enumerate() {
            cov.fixed_view_mut::<3, 3>(3 * bi, 3 * bj).copy_from(&state.cov.fixed_view::<3, 3>(i, j));
        }
    }
    EvalSample {
        stamp: state.time,
        truth,
        estimate: Pose::new(state.imu.q_ig, state.imu.p_gi, state.time),
        cov,
    }
}

enum Event {
    Lidar(LidarScan),
    Camera(CameraFrame),
}

impl Event {
    fn stamp(&self) -> f64 {
        match self {
            Event::Lidar(s) => s.sweep_start,
            Event::Camera(f) => f.stamp,
        }
    }
}

/// Simulates one run of `cfg` in `mode` with `seed` and runs the estimator
/// over it. Data generation depends only on the seed, not on the mode.
pub fn run_single(cfg: &SimConfig, mode: Mode, seed: u64, record_diagnostics: bool) -> Result<RunOutput> {
    cfg.validate()?;
    let traj = gen_trajectory(cfg)?;
    let world = WorldModel::room();
    let rig = Rig::standard(cfg.timeoff);
    let noise = imu_noise(cfg);
    let est_cfg = EstimatorConfig { record_diagnostics, ..estimator_config(cfg, mode) };

    let mut prior_rng = rng_for(seed, stream::PRIOR);
    let bg0 = gauss3(&mut prior_rng) * cfg.init_sigma_bg;
    let ba0 = gauss3(&mut prior_rng) * cfg.init_sigma_ba;
    let calib_cam = initial_calib(&rig.camera, cfg, mode.perturbed(), &mut prior_rng);
    let calib_lidar = initial_calib(&rig.lidar, cfg, mode.perturbed(), &mut prior_rng);

    // margin for the deskew lookahead and the clock offsets
    let t_imu_end = cfg.duration + 1.0;
    let imu = sim_imu(&traj, &noise, cfg.imu_freq, 0.0, t_imu_end, (bg0, ba0), &mut rng_for(seed, stream::IMU));

    let mut events = Vec::new();
    if mode.uses_lidar() {
        let model = LidarModel::from_config(cfg);
        let mut rng = rng_for(seed, stream::LIDAR);
        let mut k = 1;
        while (k as f64 + 1.0) / cfg.lidar_freq <= cfg.duration {
            events.push(Event::Lidar(sim_lidar(&traj, &world, &rig.lidar, &model, k as f64 / cfg.lidar_freq, &mut rng)));
            k += 1;
        }
    }
    if mode.uses_camera() {
        let model = CameraModel::from_config(cfg);
        let landmarks = world.sample_landmarks(&mut rng_for(seed, stream::LANDMARKS), cfg.num_landmarks);
        let mut rng = rng_for(seed, stream::CAMERA);
        let mut k = 1;
        while k as f64 / cfg.cam_freq <= cfg.duration {
            events.push(Event::Camera(sim_camera(&traj, &landmarks, &rig.camera, &model, k as f64 / cfg.cam_freq, &mut rng)));
            k += 1;
        }
    }
    events.sort_by(|a, b| a.stamp().total_cmp(&b.stamp()));

    let k0 = traj.at(0.0);
    let imu0 = ImuCoreState {
        q_ig: JplQuaternion::from_rot(&k0.rot),
        bg: Vector3::zeros(),
        v_gi: k0.vel,
        ba: Vector3::zeros(),
        p_gi: k0.pos,
    };
    let state_cfg = StateConfig {
        max_cam_clones: cfg.num_clones_image,
        max_lidar_clones: cfg.num_clones_lidar,
        max_slam_points: cfg.max_num_slam_point,
        max_slam_planes: cfg.max_num_slam_plane,
        ..StateConfig::default()
    };
    let state = FilterState::new(0.0, imu0, calib_cam, calib_lidar, initial_cov(cfg, mode.calibrates()), state_cfg)?;
    let mut est = Estimator::new(state, est_cfg)?;
    est.feed_imu(&imu.samples)?;

    let mut out = RunOutput {
        seed,
        mode,
        samples: Vec::with_capacity(events.len()),
        calibration: Vec::with_capacity(events.len()),
        stats: EstimatorStats::default(),
        diagnostics: Vec::new(),
        failure: None,
    };
    for event in &events {
        let step = match event {
            Event::Lidar(scan) => est.process_lidar(scan),
            Event::Camera(frame) => est.process_camera(frame.stamp, &frame.features),
        };
        if let Err(e) = step {
            out.failure = Some(format!("estimator error at t = {:.3}: {e}", est.state().time));
            break;
        }
        let state = est.state();
        let truth = imu_pose(&traj, state.time);
        let sample = eval_sample(state, truth);
        if (sample.truth.position - sample.estimate.position).norm() > DIVERGENCE_M || !state.imu.p_gi.iter().all(|v| v.is_finite()) {
            out.failure = Some(format!("diverged at t = {:.3}", state.time));
            break;
        }
        if out.samples.last().is_none_or(|s: &EvalSample| s.stamp < sample.stamp) {
            out.samples.push(sample);
            out.calibration.push(calib_record(state, &rig.lidar));
        }
    }
    out.stats = est.stats();
    out.diagnostics = est.take_diagnostics();
    Ok(out)
}

/// One line of a Monte-Carlo report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub stats: EstimatorStats,
}

/// Mean metrics over the successful runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub ate_ori_deg: f64,
    pub ate_pos_m: f64,
    pub nees_ori: f64,
    pub nees_pos: f64,
    pub drift_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub mode: Mode,
    pub runs: usize,
    pub succeeded: usize,
    pub failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<MeanMetrics>,
    pub per_run: Vec<RunSummary>,
    pub config: SimConfig,
}

impl MonteCarloReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Seed of run `i` of a batch started at `seed`.
pub fn run_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Runs `n_runs` seeds in parallel and aggregates their metrics in seed order.
pub fn run_monte_carlo(cfg: &SimConfig, mode: Mode, n_runs: usize, seed: u64) -> Result<(MonteCarloReport, Vec<RunOutput>)> {
    if n_runs == 0 {
        return Err(Error::Config("at least one run is required".into()));
    }
    cfg.validate()?;
    let outputs: Vec<RunOutput> = (0..n_runs)
        .into_par_iter()
        .map(|i| run_single(cfg, mode, run_seed(seed, i), false))
        .collect::<Result<_>>()?;
    Ok((aggregate(cfg, mode, &outputs)?, outputs))
}

pub fn aggregate(cfg: &SimConfig, mode: Mode, outputs: &[RunOutput]) -> Result<MonteCarloReport> {
    let mut per_run = Vec::with_capacity(outputs.len());
    for o in outputs {
        let metrics = if o.failure.is_none() { Some(o.metrics()?) } else { None };
        per_run.push(RunSummary { seed: o.seed, metrics, failure: o.failure.clone(), stats: o.stats });
    }
    let ok: Vec<&RunMetrics> = per_run.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let mean = (!ok.is_empty()).then(|| {
        let n = ok.len() as f64;
        let avg = |f: &dyn Fn(&RunMetrics) -> f64| ok.iter().map(|m| f(m)).sum::<f64>() / n;
        MeanMetrics {
            ate_ori_deg: avg(&|m| m.ate_ori_deg),
            ate_pos_m: avg(&|m| m.ate_pos_m),
            nees_ori: avg(&|m| m.nees_ori),
            nees_pos: avg(&|m| m.nees_pos),
            drift_m: [avg(&|m| m.drift_m[0]), avg(&|m| m.drift_m[1]), avg(&|m| m.drift_m[2])],
        }
    });
    Ok(MonteCarloReport {
        mode,
        runs: outputs.len(),
        succeeded: ok.len(),
        failed: outputs.len() - ok.len(),
        mean,
        per_run,
        config: cfg.clone(),
    })
}
