//! Error-state IMU propagation and the high-rate pose buffer.
//!
//! Kinematics (JPL, `R = ^I_G R`): `q̇ = ½[ω;0]⊗q`, `v̇ = Rᵀa + g`, `ṗ = v`
//! with `ω = ω_m - b_g`, `a = a_m - b_a`. The error dynamics are
//! `δθ̇ = -[ω]x δθ - b̃_g`, `ṽ̇ = -Rᵀ[a]x δθ - Rᵀ b̃_a`, `p̃̇ = ṽ`.

mod buffer;

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

pub use buffer::PoseBuffer;

use crate::error::{Error, Result};
use crate::geom::{skew, JplQuaternion, Pose};
use crate::state::{imu_idx, symmetrize, FilterState, ImuCoreState, IMU_DIM};

pub type Mat15 = SMatrix<f64, 15, 15>;
type Mat15x12 = SMatrix<f64, 15, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub stamp: f64,
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(stamp: f64, omega: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { stamp, omega, accel }
    }
}

/// Continuous-time noise densities and gravity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoise {
    pub sigma_g: f64,
    pub sigma_wg: f64,
    pub sigma_a: f64,
    pub sigma_wa: f64,
    pub gravity: Vector3<f64>,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            sigma_g: 1.6968e-4,
            sigma_wg: 1.9393e-5,
            sigma_a: 2.0e-3,
            sigma_wa: 3.0e-3,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

impl ImuNoise {
    /// Noise-free model, useful for deterministic checks.
    pub fn zero() -> Self {
        Self { sigma_g: 0.0, sigma_wg: 0.0, sigma_a: 0.0, sigma_wa: 0.0, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let s = [self.sigma_g, self.sigma_wg, self.sigma_a, self.sigma_wa];
        if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("IMU noise densities must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropagationWarning {
    /// Two consecutive samples further apart than twice the nominal period.
    SampleGap { start: f64, end: f64 },
}

/// Outcome of a propagation call.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// Transition matrix of the IMU error state over the whole interval.
    pub phi: Mat15,
    /// Discrete process noise accumulated over the interval.
    pub q_d: Mat15,
    /// Propagated poses at every integration knot, start and end included.
    pub poses: Vec<Pose>,
    pub warnings: Vec<PropagationWarning>,
}

/// Propagation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator {
    pub noise: ImuNoise,
    /// Expected sample spacing in seconds.
    pub nominal_period: f64,
}

impl Propagator {
    pub fn new(noise: ImuNoise, rate_hz: f64) -> Self {
        Self { noise, nominal_period: 1.0 / rate_hz }
    }

    /// Propagates mean and covariance from `state.time` to `t_end`.
    ///
    /// The IMU block evolves as `P ← Φ P Φᵀ + Q_d`; everything else only
    /// through its correlation with the IMU.
    pub fn propagate(&self, state: &mut FilterState, samples: &[ImuSample], t_end: f64) -> Result<Propagation> {
        self.noise.validate()?;
        let knots = knots(samples, state.time, t_end)?;
        let warnings = self.gaps(samples, state.time, t_end);
        let (imu, phi, q_d, poses, omega) = integrate(&state.imu, &knots, &self.noise, true);
        state.imu = imu;
        state.omega = omega;
        state.time = t_end;

        let n = state.dim();
        let phi_d = DMatrix::from_column_slice(IMU_DIM, IMU_DIM, phi.as_slice());
        let q_dd = DMatrix::from_column_slice(IMU_DIM, IMU_DIM, q_d.as_slice());
        let rows = &phi_d * state.cov.rows(0, IMU_DIM);
        let p_ii = rows.columns(0, IMU_DIM) * phi_d.transpose() + q_dd;
        let mut cov = state.cov.clone();
        cov.rows_mut(0, IMU_DIM).copy_from(&rows);
        if n > IMU_DIM {
            let cross = rows.columns(IMU_DIM, n - IMU_DIM).into_owned();
            cov.view_mut((IMU_DIM, 0), (n - IMU_DIM, IMU_DIM)).copy_from(&cross.transpose());
        }
        cov.view_mut((0, 0), (IMU_DIM, IMU_DIM)).copy_from(&p_ii);
        state.cov = symmetrize(cov);
        Ok(Propagation { phi, q_d, poses, warnings })
    }

    fn gaps(&self, samples: &[ImuSample], t0: f64, t1: f64) -> Vec<PropagationWarning> {
        samples
            .windows(2)
            .filter(|w| w[1].stamp > t0 && w[0].stamp < t1)
            .filter(|w| w[1].stamp - w[0].stamp > 2.0 * self.nominal_period)
            .map(|w| PropagationWarning::SampleGap { start: w[0].stamp, end: w[1].stamp })
            .collect()
    }
}

/// Mean-only propagation; returns the final state and the poses at every knot.
pub fn propagate_mean(
    imu: &ImuCoreState,
    samples: &[ImuSample],
    t0: f64,
    t1: f64,
    gravity: &Vector3<f64>,
) -> Result<(ImuCoreState, Vec<Pose>)> {
    let knots = knots(samples, t0, t1)?;
    let noise = ImuNoise { gravity: *gravity, ..ImuNoise::zero() };
    let (out, _, _, poses, _) = integrate(imu, &knots, &noise, false);
    Ok((out, poses))
}

/// Measurement at time `t` by linear interpolation of the bracketing samples.
pub fn interpolate_sample(samples: &[ImuSample], t: f64) -> Result<ImuSample> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Precondition("no IMU samples".into())),
    };
    if !(t >= first.stamp && t <= last.stamp) {
        return Err(Error::OutOfRange { t, start: first.stamp, end: last.stamp });
    }
    let k = samples.partition_point(|s| s.stamp <= t);
    if k == samples.len() {
        return Ok(ImuSample { stamp: t, ..*last });
    }
    let (a, b) = (&samples[k - 1], &samples[k]);
    let lambda = (t - a.stamp) / (b.stamp - a.stamp);
    Ok(ImuSample {
        stamp: t,
        omega: a.omega + (b.omega - a.omega) * lambda,
        accel: a.accel + (b.accel - a.accel) * lambda,
    })
}

/// Integration knots: the interval ends plus every sample strictly inside.
fn knots(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>> {
    if let Some(i) = samples.windows(2).position(|w| !(w[1].stamp > w[0].stamp)) {
        return Err(Error::NonMonotone { index: i + 1 });
    }
    if !(t1 >= t0) {
        return Err(Error::Precondition(format!("propagation end {t1} before start {t0}")));
    }
    let mut out = vec![interpolate_sample(samples, t0)?];
    out.extend(samples.iter().filter(|s| s.stamp > t0 && s.stamp < t1).copied());
    if t1 > t0 {
        out.push(interpolate_sample(samples, t1)?);
    }
    Ok(out)
}

fn quat_rate(q: &JplQuaternion, omega: &Vector3<f64>) -> JplQuaternion {
    let w = JplQuaternion { x: 0.5 * omega.x, y: 0.5 * omega.y, z: 0.5 * omega.z, w: 0.0 };
    JplQuaternion::multiply_raw(&w, q)
}

pub(crate) fn error_dynamics(r: &Matrix3<f64>, omega: &Vector3<f64>, accel: &Vector3<f64>) -> Mat15 {
    let mut f = Mat15::zeros();
    f.fixed_view_mut::<3, 3>(imu_idx::THETA, imu_idx::THETA).copy_from(&(-skew(omega)));
    f.fixed_view_mut::<3, 3>(imu_idx::THETA, imu_idx::BG).copy_from(&(-Matrix3::identity()));
    f.fixed_view_mut::<3, 3>(imu_idx::V, imu_idx::THETA).copy_from(&(-r.transpose() * skew(accel)));
    f.fixed_view_mut::<3, 3>(imu_idx::V, imu_idx::BA).copy_from(&(-r.transpose()));
    f.fixed_view_mut::<3, 3>(imu_idx::P, imu_idx::V).copy_from(&Matrix3::identity());
    f
}

/// Noise input map for `(n_g, n_wg, n_a, n_wa)`.
fn noise_input(r: &Matrix3<f64>) -> Mat15x12 {
    let mut g = Mat15x12::zeros();
    g.fixed_view_mut::<3, 3>(imu_idx::THETA, 0).copy_from(&(-Matrix3::identity()));
    g.fixed_view_mut::<3, 3>(imu_idx::BG, 3).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(imu_idx::V, 6).copy_from(&(-r.transpose()));
    g.fixed_view_mut::<3, 3>(imu_idx::BA, 9).copy_from(&Matrix3::identity());
    g
}

#[derive(Clone, Copy)]
struct Kin {
    q: JplQuaternion,
    v: Vector3<f64>,
    p: Vector3<f64>,
}

struct Deriv {
    q: JplQuaternion,
    v: Vector3<f64>,
    p: Vector3<f64>,
    phi: Mat15,
}

fn derivative(k: &Kin, phi: Option<&Mat15>, omega: &Vector3<f64>, accel: &Vector3<f64>, g: &Vector3<f64>) -> Deriv {
    let r = k.q.to_rot();
    let dphi = match phi {
        Some(phi) => error_dynamics(&r, omega, accel) * phi,
        None => Mat15::zeros(),
    };
    Deriv { q: quat_rate(&k.q, omega), v: r.transpose() * accel + g, p: k.v, phi: dphi }
}

fn step(k: &Kin, d: &Deriv, h: f64) -> Kin {
    Kin { q: k.q.scaled_add(&d.q, h), v: k.v + d.v * h, p: k.p + d.p * h }
}

type Integrated = (ImuCoreState, Mat15, Mat15, Vec<Pose>, Vector3<f64>);

/// RK4 on the mean and, when `with_cov`, jointly on `Φ`. Measurements are
/// bias-corrected with the biases at the start and vary linearly over each
/// interval.
fn integrate(imu: &ImuCoreState, knots: &[ImuSample], noise: &ImuNoise, with_cov: bool) -> Integrated {
    let g = noise.gravity;
    let mut kin = Kin { q: imu.q_ig, v: imu.v_gi, p: imu.p_gi };
    let mut phi = Mat15::identity();
    let mut q_d = Mat15::zeros();
    let qc = {
        let mut m = SMatrix::<f64, 12, 12>::zeros();
        for (i, s) in [noise.sigma_g, noise.sigma_wg, noise.sigma_a, noise.sigma_wa].iter().enumerate() {
            for k in 0..3 {
                m[(3 * i + k, 3 * i + k)] = s * s;
            }
        }
        m
    };
    let corr = |s: &ImuSample| (s.omega - imu.bg, s.accel - imu.ba);
    let mut poses = Vec::with_capacity(knots.len());
    poses.push(Pose::new(kin.q, kin.p, knots[0].stamp));
    for w in knots.windows(2) {
        let h = w[1].stamp - w[0].stamp;
        let (w0, a0) = corr(&w[0]);
        let (w1, a1) = corr(&w[1]);
        let (wm, am) = ((w0 + w1) * 0.5, (a0 + a1) * 0.5);
        // interval transition starts from identity
        let p0 = Mat15::identity();
        let cov = |m: &Mat15| if with_cov { Some(*m) } else { None };
        let k1 = derivative(&kin, cov(&p0).as_ref(), &w0, &a0, &g);
        let s2 = step(&kin, &k1, 0.5 * h);
        let p2 = p0 + k1.phi * (0.5 * h);
        let k2 = derivative(&s2, cov(&p2).as_ref(), &wm, &am, &g);
        let s3 = step(&kin, &k2, 0.5 * h);
        let p3 = p0 + k2.phi * (0.5 * h);
        let k3 = derivative(&s3, cov(&p3).as_ref(), &wm, &am, &g);
        let s4 = step(&kin, &k3, h);
        let p4 = p0 + k3.phi * h;
        let k4 = derivative(&s4, cov(&p4).as_ref(), &w1, &a1, &g);
        let r_start = kin.q.to_rot();
        let h6 = h / 6.0;
        let q = kin
            .q
            .scaled_add(&k1.q, h6)
            .scaled_add(&k2.q, 2.0 * h6)
            .scaled_add(&k3.q, 2.0 * h6)
            .scaled_add(&k4.q, h6)
            .renormalize();
        kin = Kin {
            q,
            v: kin.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * h6,
            p: kin.p + (k1.p + k2.p * 2.0 + k3.p * 2.0 + k4.p) * h6,
        };
        if with_cov {
            let phi_k = p0 + (k1.phi + k2.phi * 2.0 + k3.phi * 2.0 + k4.phi) * h6;
            let g0 = noise_input(&r_start);
            let g1 = noise_input(&kin.q.to_rot());
            let qk = (phi_k * g0 * qc * g0.transpose() * phi_k.transpose() + g1 * qc * g1.transpose()) * (0.5 * h);
            q_d = phi_k * q_d * phi_k.transpose() + qk;
            phi = phi_k * phi;
        }
        poses.push(Pose::new(kin.q, kin.p, w[1].stamp));
    }
    let last = knots.last().expect("at least one knot");
    let out = ImuCoreState { q_ig: kin.q, v_gi: kin.v, p_gi: kin.p, ..*imu };
    (out, phi, q_d, poses, last.omega - imu.bg)
}
