//! Rotation algebra in the JPL quaternion convention, SO(3) exponential and
//! logarithm maps, and time-stamped poses with geodesic interpolation.
//!
//! A [`JplQuaternion`] stores the vector part first and the scalar last and
//! represents the rotation `R` that maps global coordinates into the local
//! frame. Error states perturb rotations on the left:
//! `R = exp(-[dθ]x) R̂ ≈ (I - [dθ]x) R̂`.

mod pose;
mod quat;
mod so3;

pub use pose::{pose_interpolate, Pose};
pub use quat::JplQuaternion;
pub use so3::{is_rotation, skew, so3_exp, so3_log, Rot3};
