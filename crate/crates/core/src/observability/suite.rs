use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::directions::{self as dirs, Direction};
use super::system::{build_observability_matrix, certify_direction, numeric_nullspace, GlobalPlane, ObservabilitySystem};
use crate::error::{Error, Result};
use crate::geom::{so3_exp, JplQuaternion, Rot3};
use crate::state::CalibState;
use crate::trajectory::{Orientation, Position, Trajectory, Wave};

/// Residual below which a direction counts as unobservable.
pub const UNOBSERVABLE_TOL: f64 = 1e-6;
/// Residual above which a control direction counts as observable.
pub const OBSERVABLE_MIN: f64 = 1e-2;
/// Relative singular value threshold of the numerical nullspace.
pub const NULLSPACE_TOL: f64 = 1e-8;

const DURATION: f64 = 3.0;
const STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateMotion {
    General,
    PureTranslation,
    /// Rotation about one body axis, not perpendicular to the plane normal.
    OneAxisRotation,
    /// Rotation about one body axis lying in the plane.
    OneAxisRotationInPlane,
    ConstOmegaV,
    ConstOmegaA,
    /// Rotation about the plane normal with velocity inside the plane.
    OmegaParallelNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneConfig {
    One,
    Parallel,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Case {
    pub name: &'static str,
    pub motion: DegenerateMotion,
    pub planes: PlaneConfig,
    /// Nullspace dimension the case must show, where one is stated.
    pub expected_dimension: Option<usize>,
}

pub const CASES: [Case; 9] = [
    Case { name: "general", motion: DegenerateMotion::General, planes: PlaneConfig::One, expected_dimension: Some(7) },
    Case {
        name: "pure-translation",
        motion: DegenerateMotion::PureTranslation,
        planes: PlaneConfig::One,
        expected_dimension: Some(11),
    },
    Case {
        name: "one-axis-rotation",
        motion: DegenerateMotion::OneAxisRotation,
        planes: PlaneConfig::One,
        expected_dimension: None,
    },
    Case {
        name: "one-axis-rotation-in-plane",
        motion: DegenerateMotion::OneAxisRotationInPlane,
        planes: PlaneConfig::One,
        expected_dimension: None,
    },
    Case { name: "const-omega-v", motion: DegenerateMotion::ConstOmegaV, planes: PlaneConfig::One, expected_dimension: None },
    Case { name: "const-omega-a", motion: DegenerateMotion::ConstOmegaA, planes: PlaneConfig::One, expected_dimension: None },
    Case {
        name: "omega-parallel-normal",
        motion: DegenerateMotion::OmegaParallelNormal,
        planes: PlaneConfig::One,
        expected_dimension: None,
    },
    Case {
        name: "general-parallel-planes",
        motion: DegenerateMotion::General,
        planes: PlaneConfig::Parallel,
        expected_dimension: Some(7),
    },
    Case {
        name: "general-three-planes",
        motion: DegenerateMotion::General,
        planes: PlaneConfig::General,
        expected_dimension: Some(4),
    },
];

pub fn find_case(name: &str) -> Result<Case> {
    CASES.iter().copied().find(|c| c.name == name).ok_or_else(|| {
        let names: Vec<&str> = CASES.iter().map(|c| c.name).collect();
        Error::Config(format!("unknown case {name:?}; expected one of {}", names.join(", ")))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub name: String,
    pub residual: f64,
    pub expect_unobservable: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullspaceCertificate {
    pub case: String,
    pub motion: DegenerateMotion,
    pub planes: PlaneConfig,
    pub steps: usize,
    pub dimension: usize,
    pub expected_dimension: Option<usize>,
    pub directions: Vec<DirectionCheck>,
    pub passed: bool,
}

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}

pub fn lab_calibration() -> CalibState {
    CalibState {
        q_si: JplQuaternion::from_rot(&so3_exp(&Vector3::new(0.2, -0.3, 0.1))),
        p_si: Vector3::new(0.1, -0.2, 0.15),
        td: 0.0,
    }
}

fn planes_for(config: PlaneConfig) -> Vec<GlobalPlane> {
    let n = Vector3::new(0.3, -0.5, 0.8);
    match config {
        PlaneConfig::One => vec![GlobalPlane::new(n, 3.0 * n.norm())],
        PlaneConfig::Parallel => vec![GlobalPlane::new(n, 3.0 * n.norm()), GlobalPlane::new(-n, 2.0 * n.norm())],
        PlaneConfig::General => vec![
            GlobalPlane::new(Vector3::new(1.0, 0.0, 0.2), 4.0),
            GlobalPlane::new(Vector3::new(0.0, 1.0, -0.1), -3.0),
            GlobalPlane::new(Vector3::new(0.1, 0.2, 1.0), 2.5),
        ],
    }
}

fn base_rotation() -> Rot3 {
    so3_exp(&Vector3::new(0.4, -0.2, 1.1))
}

fn wandering_position() -> Position {
    Position::Waves {
        basis: Rot3::identity(),
        waves: [Wave::sine(0.2, 1.0, 0.7, 0.1), Wave::sine(-0.3, 0.8, 0.9, 1.3), Wave::sine(0.1, 0.4, 1.3, 0.4)],
    }
}

fn trajectory_for(motion: DegenerateMotion, plane: &GlobalPlane) -> Trajectory {
    let r0 = base_rotation();
    let n = plane.normal;
    let varying = Wave { offset: 0.0, rate: 0.3, amp: 0.8, freq: 0.6, phase: 0.2 };
    match motion {
        DegenerateMotion::General => Trajectory {
            orientation: Orientation::Euler {
                base: r0,
                angles: [Wave::sine(0.0, 0.5, 0.8, 0.0), Wave::sine(0.1, 0.4, 1.1, 0.7), Wave::sine(-0.2, 0.9, 0.5, 1.9)],
            },
            position: wandering_position(),
        },
        DegenerateMotion::PureTranslation => Trajectory { orientation: Orientation::Fixed(r0), position: wandering_position() },
        DegenerateMotion::OneAxisRotation => {
            // an axis that is neither along nor across the plane normal
            let k_g = (n + plane.basis().column(0) * 1.5).normalize();
            Trajectory { orientation: Orientation::Axis { base: r0, axis: r0 * k_g, angle: varying }, position: wandering_position() }
        }
        DegenerateMotion::OneAxisRotationInPlane => {
            let k_g = plane.basis().column(0).into_owned();
            Trajectory { orientation: Orientation::Axis { base: r0, axis: r0 * k_g, angle: varying }, position: wandering_position() }
        }
        DegenerateMotion::ConstOmegaV => {
            Trajectory::const_twist(r0, Vector3::new(0.2, -0.1, 0.3), Vector3::new(0.1, 0.3, 0.5), Vector3::new(0.5, 0.2, -0.1))
        }
        DegenerateMotion::ConstOmegaA => {
            let omega = Vector3::new(-0.2, 0.4, 0.3);
            Trajectory {
                orientation: Orientation::Axis { base: r0, axis: omega.normalize(), angle: Wave::linear(0.0, omega.norm()) },
                position: Position::ConstAccel {
                    p0: Vector3::new(0.2, -0.1, 0.3),
                    v0: Vector3::new(0.3, -0.2, 0.1),
                    accel: Vector3::new(0.1, -0.2, 0.05),
                },
            }
        }
        DegenerateMotion::OmegaParallelNormal => Trajectory {
            orientation: Orientation::Axis { base: r0, axis: r0 * n, angle: varying },
            position: Position::Waves {
                basis: plane.basis(),
                waves: [Wave::sine(0.2, 1.0, 0.7, 0.1), Wave::sine(-0.3, 0.8, 0.9, 1.3), Wave::constant(0.0)],
            },
        },
    }
}

/// Directions certified unobservable and control directions that must be
/// observable for each motion.
pub(crate) fn direction_sets(
    motion: DegenerateMotion,
    config: PlaneConfig,
    traj: &Trajectory,
    calib: &CalibState,
    planes: &[GlobalPlane],
) -> (Vec<Direction>, Vec<Direction>) {
    let k = traj.at(0.0);
    let g = gravity();
    let np = planes.len();
    let mut unobs = if config == PlaneConfig::General {
        let mut v = vec![dirs::global_yaw(&k, planes, &g)];
        for (i, x) in [Vector3::x(), Vector3::y(), Vector3::z()].iter().enumerate() {
            v.push(dirs::global_translation(planes, x, &format!("N{} translation e{}", i + 2, i + 1)));
        }
        v
    } else {
        dirs::one_plane_directions(&k, planes, &g)
    };
    let extrinsic = dirs::pure_translation_directions(&k, calib, planes);
    let axis = match &traj.orientation {
        Orientation::Axis { axis, .. } => Some(*axis),
        _ => None,
    };
    let mut control = Vec::new();
    match motion {
        DegenerateMotion::General => {
            control.extend(extrinsic);
            control.push(dirs::time_offset_only(np));
        }
        DegenerateMotion::PureTranslation => {
            unobs.extend(extrinsic);
            control.push(dirs::time_offset_only(np));
        }
        DegenerateMotion::OneAxisRotation => {
            unobs.push(dirs::rotation_axis_translation(&k, calib, &axis.unwrap(), np));
            control.push(dirs::in_plane_axis_translation(calib, &axis.unwrap(), np));
            control.extend(extrinsic.into_iter().take(1));
            control.push(dirs::time_offset_only(np));
        }
        DegenerateMotion::OneAxisRotationInPlane => {
            unobs.push(dirs::rotation_axis_translation(&k, calib, &axis.unwrap(), np));
            unobs.push(dirs::in_plane_axis_translation(calib, &axis.unwrap(), np));
            control.push(dirs::time_offset_only(np));
        }
        DegenerateMotion::ConstOmegaV => {
            unobs.push(dirs::rotation_axis_translation(&k, calib, &axis.unwrap(), np));
            unobs.push(dirs::time_offset_const_velocity(&k, calib, np));
            control.push(dirs::time_offset_only(np));
        }
        DegenerateMotion::ConstOmegaA => {
            unobs.push(dirs::rotation_axis_translation(&k, calib, &axis.unwrap(), np));
            unobs.push(dirs::time_offset_const_accel(&k, calib, np));
            control.push(dirs::time_offset_only(np));
        }
        DegenerateMotion::OmegaParallelNormal => {
            unobs.push(dirs::rotation_axis_translation(&k, calib, &axis.unwrap(), np));
            // planar motion parallel to the plane keeps the measured distance
            // constant, so no extrinsic control is observable here
            unobs.push(dirs::time_offset_only(np));
        }
    }
    (unobs, control)
}

/// Scene and stacked system of one case.
pub struct CaseSystem {
    pub trajectory: Trajectory,
    pub planes: Vec<GlobalPlane>,
    pub calib: CalibState,
    pub system: ObservabilitySystem,
}

pub fn case_system(case: &Case) -> Result<CaseSystem> {
    let planes = planes_for(case.planes);
    let trajectory = trajectory_for(case.motion, &planes[0]);
    let calib = lab_calibration();
    let n_steps = (DURATION / STEP).round() as usize + 1;
    let times: Vec<f64> = (0..n_steps).map(|i| i as f64 * STEP).collect();
    let system = build_observability_matrix(&trajectory, &calib, &planes, &times, &gravity())?;
    Ok(CaseSystem { trajectory, planes, calib, system })
}

pub fn run_case(case: &Case) -> Result<NullspaceCertificate> {
    let CaseSystem { trajectory: traj, planes, calib, system } = case_system(case)?;
    let n_steps = system.steps.len();
    let m = system.matrix();
    let dimension = numeric_nullspace(&m, NULLSPACE_TOL).ncols();
    let (unobs, control) = direction_sets(case.motion, case.planes, &traj, &calib, &planes);
    let mut directions = Vec::new();
    for (set, expect_unobservable) in [(unobs, true), (control, false)] {
        for d in set {
            let residual = certify_direction(&m, &d.vector)?;
            let passed = if expect_unobservable { residual < UNOBSERVABLE_TOL } else { residual > OBSERVABLE_MIN };
            directions.push(DirectionCheck { name: d.name, residual, expect_unobservable, passed });
        }
    }
    let passed = directions.iter().all(|d| d.passed) && case.expected_dimension.is_none_or(|e| e == dimension);
    Ok(NullspaceCertificate {
        case: case.name.to_string(),
        motion: case.motion,
        planes: case.planes,
        steps: n_steps,
        dimension,
        expected_dimension: case.expected_dimension,
        directions,
        passed,
    })
}

/// Every case, in the order of [`CASES`].
pub fn run_degenerate_suite() -> Result<Vec<NullspaceCertificate>> {
    CASES.par_iter().map(run_case).collect()
}

/// Human-readable summary, one block per certificate.
pub fn format_table(certs: &[NullspaceCertificate]) -> String {
    let mut s = String::new();
    for c in certs {
        let expected = c.expected_dimension.map_or("-".to_string(), |e| e.to_string());
        let _ = writeln!(
            s,
            "{:<28} planes={:<8} dim={:<3} expected={:<3} {}",
            c.case,
            format!("{:?}", c.planes).to_lowercase(),
            c.dimension,
            expected,
            if c.passed { "PASS" } else { "FAIL" }
        );
        for d in &c.directions {
            let _ = writeln!(
                s,
                "    {:<50} {:>10.3e}  {} {}",
                d.name,
                d.residual,
                if d.expect_unobservable { "unobservable" } else { "observable  " },
                if d.passed { "ok" } else { "MISMATCH" }
            );
        }
    }
    s
}
