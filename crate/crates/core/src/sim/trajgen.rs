use std::f64::consts::PI;

use nalgebra::Vector3;

use super::config::{SimConfig, TrajectoryKind};
use crate::error::{Error, Result};
use crate::geom::Rot3;
use crate::trajectory::{Fourier, Orientation, Position, Trajectory, Wave};

/// Seconds per loop of the room trajectories.
const LOOP_PERIOD: f64 = 20.0;
const HEIGHT: f64 = 1.5;

fn loop_rate() -> f64 {
    2.0 * PI / LOOP_PERIOD
}

/// Ellipse around the room center with a gentle height oscillation.
fn room_loop() -> Position {
    let w = loop_rate();
    Position::Waves {
        basis: Rot3::identity(),
        waves: [
            Wave::sine(0.0, 2.5, w, 0.5 * PI),
            Wave::sine(0.0, 2.0, w, 0.0),
            Wave::sine(HEIGHT, 0.3, 2.0 * w, 0.3),
        ],
    }
}

/// Yaw that roughly follows the direction of travel.
fn heading() -> Wave {
    Wave { offset: 0.5 * PI, rate: loop_rate(), amp: 0.2, freq: 0.5, phase: 0.0 }
}

/// Builds the analytic trajectory of `cfg.trajectory`.
pub fn gen_trajectory(cfg: &SimConfig) -> Result<Trajectory> {
    let kind = &cfg.trajectory;
    if *kind != TrajectoryKind::Waypoints && !cfg.waypoints.is_empty() {
        return Err(Error::Config(format!("waypoints given for trajectory {kind:?}")));
    }
    Ok(match kind {
        TrajectoryKind::General3d => Trajectory {
            orientation: Orientation::Euler {
                base: Rot3::identity(),
                angles: [Wave::sine(0.0, 0.15, 0.8, 0.0), Wave::sine(0.0, 0.1, 0.6, 1.0), heading()],
            },
            position: room_loop(),
        },
        TrajectoryKind::OneAxisYaw => Trajectory {
            orientation: Orientation::Axis { base: Rot3::identity(), axis: Vector3::z(), angle: heading() },
            position: room_loop(),
        },
        TrajectoryKind::PureTranslation => Trajectory { orientation: Orientation::Fixed(Rot3::identity()), position: room_loop() },
        TrajectoryKind::ConstOmegaV => {
            let w = loop_rate();
            let speed = 0.8;
            let radius = speed / w;
            Trajectory::const_twist(
                Rot3::identity(),
                Vector3::new(0.0, -radius, HEIGHT),
                Vector3::new(0.0, 0.0, w),
                Vector3::new(speed, 0.0, 0.0),
            )
        }
        TrajectoryKind::Waypoints => {
            if cfg.waypoints.len() < 3 {
                return Err(Error::Config("waypoint trajectory needs at least 3 waypoints".into()));
            }
            let column = |i: usize| -> Vec<f64> { cfg.waypoints.iter().map(|w| w[i]).collect() };
            let period = cfg.waypoint_period;
            // unwrap yaw so the interpolant does not spin through ±π jumps
            let mut yaw = column(3);
            for k in 1..yaw.len() {
                while yaw[k] - yaw[k - 1] > PI {
                    yaw[k] -= 2.0 * PI;
                }
                while yaw[k] - yaw[k - 1] < -PI {
                    yaw[k] += 2.0 * PI;
                }
            }
            // the loop may close after whole turns; that part is a linear trend
            let n = yaw.len();
            let mut closing = cfg.waypoints[0][3];
            while closing - yaw[n - 1] > PI {
                closing -= 2.0 * PI;
            }
            while closing - yaw[n - 1] < -PI {
                closing += 2.0 * PI;
            }
            let rate = (closing - yaw[0]) / period;
            let detrended: Vec<f64> = yaw.iter().enumerate().map(|(k, y)| y - rate * period * k as f64 / n as f64).collect();
            let mut angle = Fourier::interpolate(&detrended, period);
            angle.rate = rate;
            Trajectory {
                orientation: Orientation::AxisSeries { base: Rot3::identity(), axis: Vector3::z(), angle },
                position: Position::Series([
                    Fourier::interpolate(&column(0), period),
                    Fourier::interpolate(&column(1), period),
                    Fourier::interpolate(&column(2), period),
                ]),
            }
        }
    })
}
