//! Analytic rigid-body trajectories with exact rates, plus the ideal IMU
//! readings they induce.
//!
//! Orientation is `R = ^I_G R` (global to body); the body rate satisfies
//! `Ṙ = -[ω]x R`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{skew, so3_exp, JplQuaternion, Pose, Rot3};
use crate::imu::ImuSample;

/// `offset + rate·t + amp·sin(freq·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub offset: f64,
    pub rate: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Wave {
    pub const fn constant(offset: f64) -> Self {
        Self { offset, rate: 0.0, amp: 0.0, freq: 0.0, phase: 0.0 }
    }

    pub const fn linear(offset: f64, rate: f64) -> Self {
        Self { offset, rate, amp: 0.0, freq: 0.0, phase: 0.0 }
    }

    pub const fn sine(offset: f64, amp: f64, freq: f64, phase: f64) -> Self {
        Self { offset, rate: 0.0, amp, freq, phase }
    }

    /// Value and first two derivatives.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let arg = self.freq * t + self.phase;
        (
            self.offset + self.rate * t + self.amp * arg.sin(),
            self.rate + self.amp * self.freq * arg.cos(),
            -self.amp * self.freq * self.freq * arg.sin(),
        )
    }
}

/// Trigonometric series `mean + rate·t + Σ aₖ cos(kωt) + bₖ sin(kωt)`,
/// `ω = 2π / period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fourier {
    pub period: f64,
    pub mean: f64,
    pub rate: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl Fourier {
    /// Trigonometric interpolant through `samples` taken at `t = k·period/N`.
    /// With an even count the Nyquist term is split evenly so the series
    /// stays real and passes through every sample.
    pub fn interpolate(samples: &[f64], period: f64) -> Self {
        let n = samples.len();
        let nf = n as f64;
        let mean = samples.iter().sum::<f64>() / nf;
        let harmonics = n / 2;
        let mut cos = vec![0.0; harmonics];
        let mut sin = vec![0.0; harmonics];
        for k in 1..=harmonics {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, y) in samples.iter().enumerate() {
                let arg = 2.0 * std::f64::consts::PI * (k * j) as f64 / nf;
                a += y * arg.cos();
                b += y * arg.sin();
            }
            let scale = if 2 * k == n { 1.0 / nf } else { 2.0 / nf };
            cos[k - 1] = a * scale;
            sin[k - 1] = if 2 * k == n { 0.0 } else { b * scale };
        }
        Self { period, mean, rate: 0.0, cos, sin }
    }

    /// Value and first two derivatives.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let w = 2.0 * std::f64::consts::PI / self.period;
        let (mut v, mut d1, mut d2) = (self.mean + self.rate * t, self.rate, 0.0);
        for (k, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let kw = (k + 1) as f64 * w;
            let (s, c) = (kw * t).sin_cos();
            v += a * c + b * s;
            d1 += kw * (b * c - a * s);
            d2 -= kw * kw * (a * c + b * s);
        }
        (v, d1, d2)
    }
}

/// `exp(-[θ e]x)`: rotation of the frame by `θ` about `e`.
fn frame_rot(axis: &Vector3<f64>, angle: f64) -> Rot3 {
    so3_exp(&(axis * angle)).transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Orientation {
    Fixed(Rot3),
    /// `R = Ex(a) Ey(b) Ez(c) R0` with `Ex(θ) = exp(-[θ x]x)`.
    Euler { base: Rot3, angles: [Wave; 3] },
    /// `R = exp(-[θ k]x) R0`: rotation about the body axis `k`, which is
    /// also fixed in the global frame.
    Axis { base: Rot3, axis: Vector3<f64>, angle: Wave },
    /// As [`Orientation::Axis`] with a periodic angle.
    AxisSeries { base: Rot3, axis: Vector3<f64>, angle: Fourier },
}

impl Orientation {
    /// Rotation and body rate.
    pub fn eval(&self, t: f64) -> (Rot3, Vector3<f64>) {
        match self {
            Orientation::Fixed(r) => (*r, Vector3::zeros()),
            Orientation::Euler { base, angles } => {
                let (a, da, _) = angles[0].eval(t);
                let (b, db, _) = angles[1].eval(t);
                let (c, dc, _) = angles[2].eval(t);
                let ex = frame_rot(&Vector3::x(), a);
                let ey = frame_rot(&Vector3::y(), b);
                let ez = frame_rot(&Vector3::z(), c);
                // product rule: ω(AB) = ω_A + A ω_B
                let omega = Vector3::x() * da + ex * (Vector3::y() * db) + ex * ey * (Vector3::z() * dc);
                (ex * ey * ez * base, omega)
            }
            Orientation::Axis { base, axis, angle } => {
                let (th, dth, _) = angle.eval(t);
                (frame_rot(axis, th) * base, axis * dth)
            }
            Orientation::AxisSeries { base, axis, angle } => {
                let (th, dth, _) = angle.eval(t);
                (frame_rot(axis, th) * base, axis * dth)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Position {
    /// Global coordinates `basis · (w₀, w₁, w₂)`.
    Waves { basis: Rot3, waves: [Wave; 3] },
    ConstAccel { p0: Vector3<f64>, v0: Vector3<f64>, accel: Vector3<f64> },
    /// Constant body velocity under the constant body rate `omega` from
    /// orientation `rot0` at `t = 0`. Must be paired with the matching
    /// constant-rate [`Orientation::Axis`].
    ConstBodyVelocity { p0: Vector3<f64>, rot0: Rot3, omega: Vector3<f64>, v_body: Vector3<f64> },
    /// Periodic series per global axis.
    Series([Fourier; 3]),
}

impl Position {
    /// Position, velocity and acceleration in the global frame.
    pub fn eval(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self {
            Position::Waves { basis, waves } => {
                let mut p = Vector3::zeros();
                let mut v = Vector3::zeros();
                let mut a = Vector3::zeros();
                for (i, w) in waves.iter().enumerate() {
                    let (x, dx, ddx) = w.eval(t);
                    p[i] = x;
                    v[i] = dx;
                    a[i] = ddx;
                }
                (basis * p, basis * v, basis * a)
            }
            Position::Series(series) => {
                let mut out = [Vector3::zeros(); 3];
                for (i, f) in series.iter().enumerate() {
                    let (x, dx, ddx) = f.eval(t);
                    out[0][i] = x;
                    out[1][i] = dx;
                    out[2][i] = ddx;
                }
                (out[0], out[1], out[2])
            }
            Position::ConstAccel { p0, v0, accel } => (p0 + v0 * t + accel * (0.5 * t * t), v0 + accel * t, *accel),
            Position::ConstBodyVelocity { p0, rot0, omega, v_body } => {
                let w = omega.norm();
                // v_G(t) = R0ᵀ exp([ω]x t) v_b and its closed-form integral
                let k = skew(omega);
                let e = so3_exp(&(omega * t));
                let integral = if w < 1e-12 {
                    nalgebra::Matrix3::identity() * t
                } else {
                    let k2 = k * k;
                    nalgebra::Matrix3::identity() * t
                        + k * ((1.0 - (w * t).cos()) / (w * w))
                        + k2 * ((t - (w * t).sin() / w) / (w * w))
                };
                let v = rot0.transpose() * e * v_body;
                (p0 + rot0.transpose() * integral * v_body, v, rot0.transpose() * e * k * v_body)
            }
        }
    }
}

/// Full kinematic state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub time: f64,
    pub rot: Rot3,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    /// Body-frame angular rate.
    pub omega: Vector3<f64>,
}

impl Kinematics {
    pub fn pose(&self) -> Pose {
        Pose::new(JplQuaternion::from_rot(&self.rot), self.pos, self.time)
    }

    /// Body-frame specific force for global gravity `g`.
    pub fn specific_force(&self, g: &Vector3<f64>) -> Vector3<f64> {
        self.rot * (self.acc - g)
    }

    pub fn body_velocity(&self) -> Vector3<f64> {
        self.rot * self.vel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub orientation: Orientation,
    pub position: Position,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> Kinematics {
        let (rot, omega) = self.orientation.eval(t);
        let (pos, vel, acc) = self.position.eval(t);
        Kinematics { time: t, rot, pos, vel, acc, omega }
    }

    /// Constant body rate and body velocity.
    pub fn const_twist(rot0: Rot3, p0: Vector3<f64>, omega: Vector3<f64>, v_body: Vector3<f64>) -> Self {
        let w = omega.norm();
        let axis = if w > 0.0 { omega / w } else { Vector3::z() };
        Self {
            orientation: Orientation::Axis { base: rot0, axis, angle: Wave::linear(0.0, w) },
            position: Position::ConstBodyVelocity { p0, rot0, omega, v_body },
        }
    }

    /// Noise-free IMU readings at `rate_hz` over `[t0, t1]`.
    pub fn imu_samples(&self, t0: f64, t1: f64, rate_hz: f64, g: &Vector3<f64>) -> Vec<ImuSample> {
        let n = ((t1 - t0) * rate_hz).round() as usize;
        (0..=n)
            .map(|i| {
                let t = t0 + i as f64 / rate_hz;
                let k = self.at(t);
                ImuSample::new(t, k.omega, k.specific_force(g))
            })
            .collect()
    }
}
