//! Flight software and a deterministic software-in-the-loop world for a small
//! quadrotor that flies short missions, lands with centimetre precision on a
//! fiducial-marked charging pad, recharges, and repeats — indefinitely and
//! without a human in the loop.
//!
//! The crate is organized as the onboard stack plus the simulation that closes
//! the loop around it:
//!
//! - [`geom`]: quaternion, pose and rigid-transform primitives shared by every
//!   other module. Generic over the scalar type.
//! - [`traj`]: ninth-order polynomial trajectory generation, the runtime
//!   trajectory sequencer, and the flatness map from trajectory samples to
//!   attitude/thrust references.
//! - [`ctrl`]: the cascaded position / attitude / body-rate controllers,
//!   motor mixing with prioritized saturation, and the open-loop emergency
//!   descent controller.
//! - [`nav`]: an error-state Kalman filter fusing IMU, GNSS, pressure and
//!   magnetometer data, with self-calibration states and pad relocalization.
//! - [`padvision`]: the landing-pad perception pipeline — fiducial projection,
//!   bundle pose solving, recursive smoothing, bundle calibration, and the
//!   alignment setpoints for precision landing.
//! - [`autonomy`]: the mission executive — a master state machine, the four
//!   flight-phase autopilots, and health monitoring.
//! - [`world`]: rigid-body dynamics, wind, battery, contact and sensor
//!   synthesis, all stepped at a fixed rate from named random streams so a
//!   given seed reproduces a run bit for bit.
//! - [`scenario`]: the loop that wires the stack to the world, plus Monte
//!   Carlo and bundle-study drivers and log summarization.
//!
//! Core math (`geom`, the polynomial layer of `traj`) is generic over the
//! scalar via the [`Real`] trait; the flight stack and the world fix `f64`
//! through the aliases exported at the crate root.

pub mod autonomy;
pub mod ctrl;
pub mod geom;
pub mod nav;
pub mod padvision;
pub mod rng;
pub mod traj;
pub mod vehicle;
pub mod world;

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Scalar bound for the generic math layers.
///
/// `f32` and `f64` both satisfy it; the simulation and estimator fix `f64`.
pub trait Real: RealField + FromPrimitive + Copy {
    /// Lossless-enough conversion from `f64` constants.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion from f64")
    }
}

impl<T: RealField + FromPrimitive + Copy> Real for T {}

/// 3-vector over the simulation scalar.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix over the simulation scalar.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// Unit quaternion over the simulation scalar.
pub type Quat = nalgebra::UnitQuaternion<f64>;
/// Pose (position + attitude) over the simulation scalar.
pub type Pose = geom::Pose<f64>;
/// Rigid transform over the simulation scalar.
pub type RigidTransform = geom::RigidTransform<f64>;

/// Standard gravity used across the stack, m/s^2.
pub const GRAVITY: f64 = 9.81;
