use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which motion the simulated platform performs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    General3d,
    PureTranslation,
    OneAxisYaw,
    ConstOmegaV,
    /// Closed loop through `[x, y, z, yaw]` waypoints visited at equal time
    /// intervals over one period.
    Waypoints,
}

/// Simulation and estimator settings. Key names follow the simulation
/// parameter table; every key is optional and defaults to the table value.
///
/// The text format is `key = value` per line, `#` starts a comment, and
/// strings are quoted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Hz.
    pub cam_freq: f64,
    pub imu_freq: f64,
    pub lidar_freq: f64,
    /// Meters, isotropic per point.
    pub lidar_point_noise: f64,
    pub gyro_white_noise: f64,
    pub gyro_rand_walk: f64,
    pub accel_white_noise: f64,
    pub accel_rand_walk: f64,
    /// Pixels.
    pub pixel_proj: f64,
    /// True time offset of both sensors in seconds; also the initial error of
    /// the offset estimate in the perturbed modes.
    pub timeoff: f64,
    /// Extrinsic rotation perturbation, radians.
    pub rot_ltoi: f64,
    /// Extrinsic translation perturbation, meters.
    pub pos_iinl: f64,
    pub max_num_slam_point: usize,
    pub max_num_slam_plane: usize,
    pub num_clones_image: usize,
    pub num_clones_lidar: usize,
    pub seed: u64,

    /// Seconds of motion per run.
    pub duration: f64,
    pub trajectory: TrajectoryKind,
    /// `[x, y, z, yaw]` rows for the waypoint trajectory.
    pub waypoints: Vec<[f64; 4]>,
    /// Seconds per waypoint loop.
    pub waypoint_period: f64,
    pub lidar_rings: usize,
    /// Half of the vertical field of view, degrees.
    pub lidar_half_fov: f64,
    /// Horizontal resolution, degrees.
    pub lidar_azimuth_res: f64,
    pub lidar_max_range: f64,
    pub cam_focal: f64,
    pub cam_width: f64,
    pub cam_height: f64,
    pub num_landmarks: usize,
    /// Visual features measured per image.
    pub max_features: usize,
    /// Chi-square confidence of every update gate.
    pub gate_confidence: f64,
    /// Prior standard deviations of the initial IMU state.
    pub init_sigma_theta: f64,
    pub init_sigma_velocity: f64,
    pub init_sigma_position: f64,
    pub init_sigma_bg: f64,
    pub init_sigma_ba: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cam_freq: 10.0,
            imu_freq: 200.0,
            lidar_freq: 7.0,
            lidar_point_noise: 0.03,
            gyro_white_noise: 1.6968e-4,
            gyro_rand_walk: 1.9393e-5,
            accel_white_noise: 2.0e-3,
            accel_rand_walk: 3.0e-3,
            pixel_proj: 1.0,
            timeoff: 0.01,
            rot_ltoi: 0.001,
            pos_iinl: 0.01,
            max_num_slam_point: 12,
            max_num_slam_plane: 8,
            num_clones_image: 11,
            num_clones_lidar: 8,
            seed: 0,
            duration: 20.0,
            trajectory: TrajectoryKind::General3d,
            waypoints: Vec::new(),
            waypoint_period: 30.0,
            lidar_rings: 16,
            lidar_half_fov: 15.0,
            lidar_azimuth_res: 1.0,
            lidar_max_range: 50.0,
            cam_focal: 460.0,
            cam_width: 752.0,
            cam_height: 480.0,
            num_landmarks: 500,
            max_features: 40,
            gate_confidence: 0.95,
            init_sigma_theta: 1e-3,
            init_sigma_velocity: 1e-2,
            init_sigma_position: 1e-3,
            init_sigma_bg: 1e-3,
            init_sigma_ba: 1e-2,
        }
    }
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [("cam_freq", self.cam_freq), ("imu_freq", self.imu_freq), ("lidar_freq", self.lidar_freq)];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let noises = [
            ("lidar_point_noise", self.lidar_point_noise),
            ("gyro_white_noise", self.gyro_white_noise),
            ("gyro_rand_walk", self.gyro_rand_walk),
            ("accel_white_noise", self.accel_white_noise),
            ("accel_rand_walk", self.accel_rand_walk),
            ("pixel_proj", self.pixel_proj),
            ("rot_ltoi", self.rot_ltoi),
            ("pos_iinl", self.pos_iinl),
        ];
        for (name, v) in noises {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.num_clones_image < 3 || self.num_clones_lidar < 3 {
            return Err(Error::Config("clone windows need at least 3 clones".into()));
        }
        if !(self.duration > 1.0) {
            return Err(Error::Config(format!("duration must exceed 1 s, got {}", self.duration)));
        }
        if self.lidar_rings < 2 || !(self.lidar_azimuth_res > 0.0) {
            return Err(Error::Config("LiDAR needs at least 2 rings and a positive azimuth step".into()));
        }
        match self.trajectory {
            TrajectoryKind::Waypoints if self.waypoints.len() < 3 => {
                Err(Error::Config("waypoint trajectory needs at least 3 waypoints".into()))
            }
            TrajectoryKind::Waypoints if !(self.waypoint_period > 0.0) => {
                Err(Error::Config("waypoint_period must be positive".into()))
            }
            ref k if *k != TrajectoryKind::Waypoints && !self.waypoints.is_empty() => {
                Err(Error::Config(format!("waypoints given for trajectory {k:?}")))
            }
            _ => Ok(()),
        }
    }
}

/// Estimator configuration of a Monte-Carlo mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TrueCalibOn,
    TrueCalibOff,
    BadCalibOn,
    BadCalibOff,
    /// IMU and camera only, true calibration held fixed.
    IcOnly,
    /// IMU and LiDAR only, true calibration, estimated online.
    LiOnly,
}

impl Mode {
    pub const ALL: [Mode; 6] =
        [Mode::TrueCalibOn, Mode::TrueCalibOff, Mode::BadCalibOn, Mode::BadCalibOff, Mode::IcOnly, Mode::LiOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::TrueCalibOn => "true_calib_on",
            Mode::TrueCalibOff => "true_calib_off",
            Mode::BadCalibOn => "bad_calib_on",
            Mode::BadCalibOff => "bad_calib_off",
            Mode::IcOnly => "ic_only",
            Mode::LiOnly => "li_only",
        }
    }

    pub fn uses_lidar(self) -> bool {
        self != Mode::IcOnly
    }

    pub fn uses_camera(self) -> bool {
        self != Mode::LiOnly
    }

    pub fn calibrates(self) -> bool {
        matches!(self, Mode::TrueCalibOn | Mode::BadCalibOn | Mode::LiOnly)
    }

    pub fn perturbed(self) -> bool {
        matches!(self, Mode::BadCalibOn | Mode::BadCalibOff)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.iter().copied().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown mode {s:?}; expected one of {}", names.join(", ")))
        })
    }
}
