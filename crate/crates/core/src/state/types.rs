use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::JplQuaternion;

/// Which exteroceptive sensor a clone window or calibration block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sensor {
    Camera,
    Lidar,
}

/// IMU navigation state. Error ordering: `(δθ, b̃g, ṽ, b̃a, p̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuCoreState {
    pub q_ig: JplQuaternion,
    pub bg: Vector3<f64>,
    pub v_gi: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub p_gi: Vector3<f64>,
}

impl Default for ImuCoreState {
    fn default() -> Self {
        Self {
            q_ig: JplQuaternion::identity(),
            bg: Vector3::zeros(),
            v_gi: Vector3::zeros(),
            ba: Vector3::zeros(),
            p_gi: Vector3::zeros(),
        }
    }
}

/// Sensor-to-IMU spatiotemporal calibration: `q_si` rotates IMU coordinates
/// into the sensor frame, `p_si` is the IMU origin seen from the sensor, and
/// `td` satisfies `t_imu = t_sensor + td`. Error ordering `(δθ, p̃, t̃d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibState {
    pub q_si: JplQuaternion,
    pub p_si: Vector3<f64>,
    pub td: f64,
}

impl Default for CalibState {
    fn default() -> Self {
        Self { q_si: JplQuaternion::identity(), p_si: Vector3::zeros(), td: 0.0 }
    }
}

/// A stochastic clone of the IMU pose taken when a sensor frame arrived.
///
/// Besides the pose, a clone records the bias-corrected angular rate, the
/// velocity and the time offset estimate at cloning time. Measurement models
/// use them to shift the clone by `td - td_ref` to first order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseClone {
    pub id: u64,
    pub stamp: f64,
    pub q_ig: JplQuaternion,
    pub p_gi: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub v_gi: Vector3<f64>,
    pub td_ref: f64,
}

/// Ordered clones of one sensor, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneWindow {
    pub max: usize,
    pub clones: Vec<PoseClone>,
}

impl CloneWindow {
    pub fn new(max: usize) -> Self {
        Self { max, clones: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.clones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clones.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.clones.len() >= self.max
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.clones.iter().position(|c| c.id == id)
    }

    pub fn get(&self, id: u64) -> Option<&PoseClone> {
        self.clones.iter().find(|c| c.id == id)
    }

    pub fn oldest(&self) -> Option<&PoseClone> {
        self.clones.first()
    }

    pub fn newest(&self) -> Option<&PoseClone> {
        self.clones.last()
    }
}

/// Visual point landmark in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLandmark {
    pub id: u64,
    pub p_gf: Vector3<f64>,
}

/// Closest-point plane `cp = n·d` expressed in the LiDAR frame of clone
/// `anchor_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosestPointPlane {
    pub cp: Vector3<f64>,
    pub anchor_id: u64,
}

impl ClosestPointPlane {
    pub fn new(cp: Vector3<f64>, anchor_id: u64) -> Self {
        Self { cp, anchor_id }
    }

    pub fn distance(&self) -> f64 {
        self.cp.norm()
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.cp / self.cp.norm()
    }
}

/// A plane that lives in the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlamPlane {
    pub id: u64,
    pub plane: ClosestPointPlane,
}

/// Capacities and thresholds of the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateConfig {
    pub max_cam_clones: usize,
    pub max_lidar_clones: usize,
    pub max_slam_points: usize,
    pub max_slam_planes: usize,
    /// Minimum closest-point norm in meters.
    pub d_min: f64,
    /// Minimum angle between a new SLAM plane normal and existing ones, degrees.
    pub plane_novelty_deg: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            max_cam_clones: 11,
            max_lidar_clones: 8,
            max_slam_points: 12,
            max_slam_planes: 8,
            d_min: 0.1,
            plane_novelty_deg: 10.0,
        }
    }
}
