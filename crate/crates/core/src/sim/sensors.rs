use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::world::WorldModel;
use crate::geom::{so3_exp, JplQuaternion, Pose, Rot3};
use crate::imu::{ImuNoise, ImuSample};
use crate::lidar::{sensor_pose, LidarPoint, LidarScan};
use crate::state::CalibState;
use crate::trajectory::Trajectory;

fn gauss3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// True sensor-to-IMU calibrations of the simulated rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub lidar: CalibState,
    pub camera: CalibState,
}

impl Rig {
    /// LiDAR nearly aligned with the IMU and mounted above it; camera looking
    /// along the IMU x axis. Both sensors lag the IMU clock by `td`.
    pub fn standard(td: f64) -> Self {
        let lidar = CalibState {
            q_si: JplQuaternion::from_rot(&so3_exp(&Vector3::new(0.01, -0.02, 0.015))),
            p_si: Vector3::new(0.05, -0.03, -0.10),
            td,
        };
        // camera z forward (IMU x), x right (-IMU y), y down (-IMU z)
        let mount = Rot3::from_rows(&[-Vector3::y().transpose(), -Vector3::z().transpose(), Vector3::x().transpose()]);
        let camera = CalibState {
            q_si: JplQuaternion::from_rot(&(so3_exp(&Vector3::new(-0.01, 0.015, 0.005)) * mount)),
            p_si: Vector3::new(0.02, 0.05, -0.03),
            td,
        };
        Self { lidar, camera }
    }
}

/// Simulated IMU stream with the true bias history.
#[derive(Debug, Clone)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    /// `(stamp, b_g, b_a)` at every sample.
    pub biases: Vec<(f64, Vector3<f64>, Vector3<f64>)>,
}

/// IMU readings `ω = ω_b + b_g + n_g`, `a = R(a_G - g) + b_a + n_a` with
/// random-walk biases. Continuous densities are discretized at `rate_hz`.
pub fn sim_imu<R: Rng>(
    traj: &Trajectory,
    noise: &ImuNoise,
    rate_hz: f64,
    t0: f64,
    t1: f64,
    bias0: (Vector3<f64>, Vector3<f64>),
    rng: &mut R,
) -> ImuStream {
    let dt = 1.0 / rate_hz;
    let n = ((t1 - t0) * rate_hz).round() as usize;
    let (mut bg, mut ba) = bias0;
    let mut samples = Vec::with_capacity(n + 1);
    let mut biases = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = t0 + i as f64 * dt;
        let k = traj.at(t);
        let w = k.omega + bg + gauss3(rng) * (noise.sigma_g / dt.sqrt());
        let a = k.specific_force(&noise.gravity) + ba + gauss3(rng) * (noise.sigma_a / dt.sqrt());
        samples.push(ImuSample::new(t, w, a));
        biases.push((t, bg, ba));
        bg += gauss3(rng) * (noise.sigma_wg * dt.sqrt());
        ba += gauss3(rng) * (noise.sigma_wa * dt.sqrt());
    }
    ImuStream { samples, biases }
}

/// Spinning multi-beam LiDAR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    pub rings: usize,
    pub half_fov_deg: f64,
    pub azimuth_res_deg: f64,
    pub max_range: f64,
    pub min_range: f64,
    pub noise: f64,
    /// Seconds per revolution.
    pub period: f64,
}

impl LidarModel {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            rings: cfg.lidar_rings,
            half_fov_deg: cfg.lidar_half_fov,
            azimuth_res_deg: cfg.lidar_azimuth_res,
            max_range: cfg.lidar_max_range,
            min_range: 0.3,
            noise: cfg.lidar_point_noise,
            period: 1.0 / cfg.lidar_freq,
        }
    }

    pub fn elevations(&self) -> Vec<f64> {
        (0..self.rings)
            .map(|r| (-self.half_fov_deg + 2.0 * self.half_fov_deg * r as f64 / (self.rings - 1) as f64).to_radians())
            .collect()
    }

    pub fn azimuth_steps(&self) -> usize {
        (360.0 / self.azimuth_res_deg).round() as usize
    }
}

pub fn ray_direction(elevation: f64, azimuth: f64) -> Vector3<f64> {
    Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

/// True IMU pose at time `t`.
pub fn imu_pose(traj: &Trajectory, t: f64) -> Pose {
    traj.at(t).pose()
}

/// One revolution starting at true time `t_start`. Every azimuth column is
/// fired at once from the true sensor pose at its firing time; point stamps
/// are on the sensor clock, `t_sensor = t_true - td`.
pub fn sim_lidar<R: Rng>(
    traj: &Trajectory,
    world: &WorldModel,
    calib: &CalibState,
    model: &LidarModel,
    t_start: f64,
    rng: &mut R,
) -> LidarScan {
    let elev = model.elevations();
    let n_az = model.azimuth_steps();
    let mut scan = LidarScan::empty(model.rings, t_start - calib.td, t_start + model.period - calib.td);
    for k in 0..n_az {
        let frac = k as f64 / n_az as f64;
        let tau = t_start + frac * model.period;
        let pose = sensor_pose(&imu_pose(traj, tau), calib);
        let r_gl = pose.rot().transpose();
        let az = -std::f64::consts::PI + frac * 2.0 * std::f64::consts::PI;
        for (r, e) in elev.iter().enumerate() {
            let dir = ray_direction(*e, az);
            let Some((_, range)) = world.raycast(&pose.position, &(r_gl * dir), model.max_range) else {
                continue;
            };
            if range < model.min_range {
                continue;
            }
            let xyz = dir * range + gauss3(rng) * model.noise;
            scan.rings[r].push(LidarPoint::new(xyz, r as u16, az, tau - calib.td));
        }
    }
    scan
}

/// Pinhole camera with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    pub sigma_px: f64,
}

impl CameraModel {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self { focal: cfg.cam_focal, width: cfg.cam_width, height: cfg.cam_height, sigma_px: cfg.pixel_proj }
    }

    /// Normalized coordinates of a camera-frame point inside the image.
    pub fn project(&self, p_c: &Vector3<f64>) -> Option<Vector2<f64>> {
        let uv = crate::update::project(p_c)?;
        let (u, v) = (self.focal * uv.x + 0.5 * self.width, self.focal * uv.y + 0.5 * self.height);
        (u >= 0.0 && u < self.width && v >= 0.0 && v < self.height).then_some(uv)
    }
}

/// A synthetic image: sensor-clock stamp and `(landmark index, normalized
/// coordinates)` for every visible landmark, in landmark order.
#[derive(Debug, Clone)]
pub struct CameraFrame {
    pub stamp: f64,
    pub features: Vec<(usize, Vector2<f64>)>,
}

/// Image taken at true time `t`. Landmarks behind the camera or outside the
/// image are skipped; there is no occlusion.
pub fn sim_camera<R: Rng>(
    traj: &Trajectory,
    landmarks: &[Vector3<f64>],
    calib: &CalibState,
    model: &CameraModel,
    t: f64,
    rng: &mut R,
) -> CameraFrame {
    let pose = sensor_pose(&imu_pose(traj, t), calib);
    let sigma = model.sigma_px / model.focal;
    let features = landmarks
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let p_c = pose.global_to_local(g);
            let uv = model.project(&p_c)?;
            let noise = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sigma;
            Some((i, uv + noise))
        })
        .collect();
    CameraFrame { stamp: t - calib.td, features }
}
