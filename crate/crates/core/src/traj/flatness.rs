//! Differential-flatness map from flat outputs to rigid-body references.
//!
//! A multirotor's position and yaw are flat outputs: the full state and the
//! inputs needed to fly a smooth reference follow algebraically from them and
//! their derivatives. The thrust axis must point along the mass-normalized
//! force `a + g e_z`, yaw picks the heading around it, and body rates fall out
//! of the jerk.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::geom::canonicalize;
use crate::{Quat, Vec3};

use super::segment::{FlatOutput, TrajError};

/// Thrust directions are undefined below this specific force (free fall).
pub const MIN_SPECIFIC_FORCE: f64 = 1e-6;

/// Rigid-body reference implied by a flat output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub attitude: Quat,
    /// Body-frame angular velocity feedforward (rad/s).
    pub body_rates: Vec3,
    /// Collective thrust `mass * |a + g e_z|` (N).
    pub thrust: f64,
    pub yaw: f64,
}

/// Map a flat output to the rigid-body state that tracks it.
///
/// Fails when the reference demands (near) free fall or pitches the thrust
/// axis into the heading direction, where the attitude is not defined.
pub fn flat_to_state(flat: &FlatOutput, mass: f64, gravity: f64) -> Result<ReferenceState, TrajError> {
    let force = flat.acceleration + Vec3::new(0.0, 0.0, gravity);
    let norm = force.norm();
    if norm < MIN_SPECIFIC_FORCE {
        return Err(TrajError::InfeasibleReference(format!(
            "free-fall reference: specific force {norm:.3e} m/s^2"
        )));
    }
    let b_z = force / norm;

    let x_c = Vec3::new(flat.yaw.cos(), flat.yaw.sin(), 0.0);
    let b_y_raw = b_z.cross(&x_c);
    let b_y_norm = b_y_raw.norm();
    if b_y_norm < 1e-6 {
        return Err(TrajError::InfeasibleReference(
            "thrust axis parallel to heading; attitude undefined".to_string(),
        ));
    }
    let b_y = b_y_raw / b_y_norm;
    let b_x = b_y.cross(&b_z);

    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[b_x, b_y, b_z]));
    let attitude = canonicalize(UnitQuaternion::from_rotation_matrix(&rot));

    // b_z's rate is the jerk component orthogonal to it; projecting onto the
    // body axes gives roll and pitch rates exactly. The yaw-rate term keeps
    // only the heading contribution, which is exact whenever the thrust axis
    // is not precessing around the heading.
    let h_omega = (flat.jerk - b_z * b_z.dot(&flat.jerk)) / norm;
    let body_rates = Vec3::new(
        -h_omega.dot(&b_y),
        h_omega.dot(&b_x),
        flat.yaw_rate * b_z.z,
    );

    Ok(ReferenceState {
        position: flat.position,
        velocity: flat.velocity,
        acceleration: flat.acceleration,
        attitude,
        body_rates,
        thrust: mass * norm,
        yaw: flat.yaw,
    })
}
