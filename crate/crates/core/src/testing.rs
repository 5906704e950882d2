//! Random fixtures shared by unit tests, integration tests and the
//! acceptance suite.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geom::{so3_exp, JplQuaternion};
use crate::state::{CalibState, ClosestPointPlane, FilterState, ImuCoreState, LandmarkInit, Sensor, StateConfig};

pub fn gauss3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn random_quat<R: Rng>(rng: &mut R, scale: f64) -> JplQuaternion {
    JplQuaternion::from_rot(&so3_exp(&(gauss3(rng) * scale)))
}

/// Random symmetric positive definite matrix with eigenvalues around `scale`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&a * a.transpose()) * (scale / n as f64) + DMatrix::identity(n, n) * (1e-3 * scale)
}

/// A state with `n_cam` camera clones, `n_lidar` LiDAR clones, optional
/// SLAM planes anchored in the oldest LiDAR clone, and a dense random
/// covariance.
pub fn random_state<R: Rng>(rng: &mut R, n_cam: usize, n_lidar: usize, n_planes: usize) -> FilterState {
    let imu = ImuCoreState {
        q_ig: random_quat(rng, 1.0),
        bg: gauss3(rng) * 0.01,
        v_gi: gauss3(rng),
        ba: gauss3(rng) * 0.05,
        p_gi: gauss3(rng) * 2.0,
    };
    let calib = |rng: &mut R| CalibState {
        q_si: random_quat(rng, 0.5),
        p_si: gauss3(rng) * 0.2,
        td: rng.random_range(-0.02..0.02),
    };
    let cc = calib(rng);
    let cl = calib(rng);
    let cov0 = random_spd(rng, 29, 1e-2);
    let mut state = FilterState::new(0.0, imu, cc, cl, cov0, StateConfig::default()).unwrap();
    let mut t = 0.0;
    for i in 0..(n_cam.max(n_lidar)) {
        t += 0.1;
        state.time = t;
        state.imu.q_ig = random_quat(rng, 1.0);
        state.imu.p_gi = gauss3(rng) * 2.0;
        state.imu.v_gi = gauss3(rng);
        state.omega = gauss3(rng) * 0.5;
        if i < n_cam {
            state.clone_pose(Sensor::Camera, t).unwrap();
        }
        if i < n_lidar {
            state.clone_pose(Sensor::Lidar, t).unwrap();
        }
    }
    // offset td estimates from the clone references so the time-shift terms matter
    state.calib_cam.td += 0.004;
    state.calib_lidar.td -= 0.003;
    if n_lidar > 0 {
        let anchor = state.lidar_clones.clones[0].id;
        for _ in 0..n_planes {
            let n = gauss3(rng).normalize();
            let d = rng.random_range(1.0..4.0);
            let plane = ClosestPointPlane::new(n * d, anchor);
            // bypass the novelty rule for fixtures
            let cfg = state.config;
            state.config.plane_novelty_deg = -1.0;
            state.insert_slam_plane(plane, &LandmarkInit::Independent(nalgebra::Matrix3::identity() * 1e-2)).unwrap();
            state.config = cfg;
        }
    }
    let n = state.dim();
    state.cov = random_spd(rng, n, 1e-2);
    state
}

/// Central finite-difference Jacobian of `f` through `apply_correction`.
pub fn numeric_jacobian<F>(state: &FilterState, h: f64, f: F) -> DMatrix<f64>
where
    F: Fn(&FilterState) -> nalgebra::DVector<f64>,
{
    let n = state.dim();
    let f0 = f(state);
    let mut jac = DMatrix::zeros(f0.len(), n);
    for k in 0..n {
        let mut dx = nalgebra::DVector::zeros(n);
        dx[k] = h;
        let mut sp = state.clone();
        sp.apply_correction(&dx);
        dx[k] = -h;
        let mut sm = state.clone();
        sm.apply_correction(&dx);
        let col = (f(&sp) - f(&sm)) / (2.0 * h);
        jac.set_column(k, &col);
    }
    jac
}

/// Largest column-wise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        let ca = a.column(j);
        let cb = b.column(j);
        let denom = ca.norm().max(cb.norm()).max(floor);
        worst = worst.max((ca - cb).norm() / denom);
    }
    worst
}

/// Smooth random IMU measurements on `[t0, t1]` at `rate` Hz.
pub fn random_imu_samples<R: Rng>(rng: &mut R, t0: f64, t1: f64, rate: f64) -> Vec<crate::imu::ImuSample> {
    let w0 = gauss3(rng) * 0.5;
    let w1 = gauss3(rng) * 0.5;
    let a0 = gauss3(rng) + Vector3::new(0.0, 0.0, 9.81);
    let a1 = gauss3(rng);
    let f = rng.random_range(0.5..2.0);
    let n = ((t1 - t0) * rate).ceil() as usize;
    (0..=n)
        .map(|k| {
            let t = t0 + k as f64 / rate;
            let s = (f * t).sin();
            crate::imu::ImuSample::new(t, w0 + w1 * s, a0 + a1 * s)
        })
        .collect()
}

/// Ring elevations of a 16-beam sensor spanning ±15°.
pub fn ring_elevations(n_rings: usize, half_fov_deg: f64) -> Vec<f64> {
    (0..n_rings)
        .map(|r| (-half_fov_deg + 2.0 * half_fov_deg * r as f64 / (n_rings - 1) as f64).to_radians())
        .collect()
}

pub fn ray_direction(elevation: f64, azimuth: f64) -> Vector3<f64> {
    Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

/// Nearest hit of a ray with infinite planes `nᵀx = d`.
pub fn raycast(origin: &Vector3<f64>, dir: &Vector3<f64>, planes: &[(Vector3<f64>, f64)]) -> Option<(usize, f64)> {
    planes
        .iter()
        .enumerate()
        .filter_map(|(k, (n, d))| {
            let den = n.dot(dir);
            if den.abs() < 1e-12 {
                return None;
            }
            let t = (d - n.dot(origin)) / den;
            (t > 1e-9).then_some((k, t))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Static scan of infinite planes from a sensor at the origin with identity
/// orientation; returns the scan and the plane index hit by each point in
/// ring-major order.
pub fn static_scan(planes: &[(Vector3<f64>, f64)], n_rings: usize, az_step_deg: f64, max_range: f64) -> (crate::lidar::LidarScan, Vec<usize>) {
    let elev = ring_elevations(n_rings, 15.0);
    let n_az = (360.0 / az_step_deg).round() as usize;
    let mut rings = vec![Vec::new(); n_rings];
    let mut labels = Vec::new();
    for (r, e) in elev.iter().enumerate() {
        for k in 0..n_az {
            let az = -std::f64::consts::PI + (k as f64) * az_step_deg.to_radians();
            let dir = ray_direction(*e, az);
            if let Some((plane, t)) = raycast(&Vector3::zeros(), &dir, planes) {
                if t <= max_range {
                    rings[r].push(crate::lidar::LidarPoint::new(dir * t, r as u16, az, 0.0));
                    labels.push(plane);
                }
            }
        }
    }
    (crate::lidar::LidarScan { rings, sweep_start: 0.0, sweep_end: 0.0 }, labels)
}

/// IMU pose with constant body angular rate and constant global velocity.
pub fn constant_twist_pose(start: &crate::geom::Pose, omega_body: &Vector3<f64>, v_global: &Vector3<f64>, t: f64) -> crate::geom::Pose {
    let dt = t - start.stamp;
    let r = so3_exp(&(-omega_body * dt)) * start.rot();
    crate::geom::Pose::new(JplQuaternion::from_rot(&r), start.position + v_global * dt, t)
}

/// Ray-casts a rolling sweep: azimuth column `k` fires at
/// `sweep_start + k/n · (sweep_end - sweep_start)` (sensor clock). Sensor
/// poses come from `imu_at` (IMU clock) through `calib`.
pub fn moving_scan<F: Fn(f64) -> crate::geom::Pose>(
    planes: &[(Vector3<f64>, f64)],
    imu_at: F,
    calib: &CalibState,
    sweep_start: f64,
    sweep_end: f64,
    n_rings: usize,
    az_step_deg: f64,
) -> crate::lidar::LidarScan {
    let elev = ring_elevations(n_rings, 15.0);
    let n_az = (360.0 / az_step_deg).round() as usize;
    let mut rings = vec![Vec::new(); n_rings];
    for k in 0..n_az {
        let t = sweep_start + (k as f64 / n_az as f64) * (sweep_end - sweep_start);
        let pose = crate::lidar::sensor_pose(&imu_at(t + calib.td), calib);
        let az = -std::f64::consts::PI + (k as f64) * az_step_deg.to_radians();
        for (r, e) in elev.iter().enumerate() {
            let dir_s = ray_direction(*e, az);
            let dir_g = pose.rot().transpose() * dir_s;
            if let Some((_, range)) = raycast(&pose.position, &dir_g, planes) {
                rings[r].push(crate::lidar::LidarPoint::new(dir_s * range, r as u16, az, t));
            }
        }
    }
    crate::lidar::LidarScan { rings, sweep_start, sweep_end }
}
