//! Trajectory segments: polynomial references for position and yaw over a
//! fixed duration.

use nalgebra::Vector3;

use super::poly::{boundary_interpolant, SegmentPoly, BOUNDARY_DERIVS};
use crate::geom::wrap_angle;
use crate::Vec3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("segment duration must be positive (got {0})")]
    NonPositiveDuration(f64),
    #[error("mission plan needs at least two waypoints")]
    TooFewWaypoints,
    #[error("mission leg {0} is degenerate (zero length)")]
    DegenerateLeg(usize),
    #[error("mission leg {0} has non-positive speed")]
    NonPositiveSpeed(usize),
    #[error("negative hover duration at waypoint {0}")]
    NegativeHover(usize),
    #[error("a volatile element is already active")]
    VolatileActive,
    #[error("reference is dynamically infeasible: {0}")]
    InfeasibleReference(String),
}

/// What produced a segment; constant-velocity interiors are exact straight
/// lines, which downstream checks rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Transfer,
    ConstantVelocity,
    Hover,
}

/// Snapshot of the flat output (position derivatives through snap, yaw and
/// yaw rate) at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatOutput {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub jerk: Vec3,
    pub snap: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl FlatOutput {
    /// At-rest output: hold `position` and `yaw`, all derivatives zero.
    pub fn hover(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            jerk: Vec3::zeros(),
            snap: Vec3::zeros(),
            yaw,
            yaw_rate: 0.0,
        }
    }

    /// Constant-velocity output.
    pub fn cruise(position: Vec3, velocity: Vec3, yaw: f64) -> Self {
        Self {
            velocity,
            ..Self::hover(position, yaw)
        }
    }

    /// Boundary derivative stack for one translation axis (0 = x, 1 = y, 2 = z).
    pub fn axis_derivs(&self, axis: usize) -> [f64; BOUNDARY_DERIVS] {
        [
            self.position[axis],
            self.velocity[axis],
            self.acceleration[axis],
            self.jerk[axis],
            self.snap[axis],
        ]
    }

    /// Same output with every derivative zeroed (used for terminal holds).
    pub fn frozen(&self) -> Self {
        Self::hover(self.position, self.yaw)
    }
}

/// Per-axis polynomial reference over `[0, duration]`.
///
/// Polynomials are stored in normalized time `tau = t / duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    axes: [SegmentPoly<f64>; 3],
    yaw: SegmentPoly<f64>,
    duration: f64,
    kind: SegmentKind,
}

impl TrajectorySegment {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    /// Coefficients of one axis in real-time units (`t^k`, not `tau^k`).
    pub fn axis_coeffs_unnormalized(&self, axis: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut tp = 1.0;
        for c in self.axes[axis].monomial_coeffs() {
            out.push(c / tp);
            tp *= self.duration;
        }
        out
    }

    /// Hold `position`/`yaw` for `duration`.
    pub fn hover(position: Vec3, yaw: f64, duration: f64) -> Result<Self, TrajError> {
        if duration <= 0.0 {
            return Err(TrajError::NonPositiveDuration(duration));
        }
        Ok(Self {
            axes: [
                SegmentPoly::constant(position.x),
                SegmentPoly::constant(position.y),
                SegmentPoly::constant(position.z),
            ],
            yaw: SegmentPoly::constant(yaw),
            duration,
            kind: SegmentKind::Hover,
        })
    }

    /// Straight line from `position` at constant `velocity`.
    ///
    /// Yaw sweeps smoothly (zero yaw rate at both ends) from `yaw_from` to the
    /// nearest-angle representative of `yaw_to`; pass equal values to hold yaw.
    pub fn constant_velocity(
        position: Vec3,
        velocity: Vec3,
        duration: f64,
        yaw_from: f64,
        yaw_to: f64,
    ) -> Result<Self, TrajError> {
        if duration <= 0.0 {
            return Err(TrajError::NonPositiveDuration(duration));
        }
        let yaw = if (yaw_to - yaw_from).abs() < 1e-15 {
            SegmentPoly::constant(yaw_from)
        } else {
            let target = yaw_from + wrap_angle(yaw_to - yaw_from);
            boundary_interpolant(
                &[yaw_from, 0.0, 0.0, 0.0, 0.0],
                &[target, 0.0, 0.0, 0.0, 0.0],
                duration,
            )
        };
        Ok(Self {
            axes: [
                SegmentPoly::linear(position.x, velocity.x * duration),
                SegmentPoly::linear(position.y, velocity.y * duration),
                SegmentPoly::linear(position.z, velocity.z * duration),
            ],
            yaw,
            duration,
            kind: SegmentKind::ConstantVelocity,
        })
    }

    /// Evaluate the reference `t` seconds into the segment.
    ///
    /// `t` is clamped to `[0, duration]`; the sequencer decides what happens
    /// beyond segment ends.
    pub fn evaluate(&self, t: f64) -> FlatOutput {
        let tau = (t / self.duration).clamp(0.0, 1.0);
        let mut pos = Vector3::zeros();
        let mut vel = Vector3::zeros();
        let mut acc = Vector3::zeros();
        let mut jrk = Vector3::zeros();
        let mut snp = Vector3::zeros();
        for axis in 0..3 {
            let d = self.axes[axis].eval_derivs(tau);
            pos[axis] = d[0];
            vel[axis] = d[1] / self.duration;
            acc[axis] = d[2] / self.duration.powi(2);
            jrk[axis] = d[3] / self.duration.powi(3);
            snp[axis] = d[4] / self.duration.powi(4);
        }
        let yaw = self.yaw.eval_deriv(tau, 0);
        let yaw_rate = self.yaw.eval_deriv(tau, 1) / self.duration;
        FlatOutput {
            position: pos,
            velocity: vel,
            acceleration: acc,
            jerk: jrk,
            snap: snp,
            yaw,
            yaw_rate,
        }
    }

    /// Worst boundary-condition residual against the requested end states,
    /// in SI units per derivative order.
    pub fn boundary_residual(&self, start: &FlatOutput, end: &FlatOutput) -> f64 {
        let mut worst: f64 = 0.0;
        for (t, want) in [(0.0, start), (self.duration, end)] {
            let got = self.evaluate(t);
            for axis in 0..3 {
                let w = want.axis_derivs(axis);
                let g = got.axis_derivs(axis);
                for d in 0..BOUNDARY_DERIVS {
                    worst = worst.max((w[d] - g[d]).abs());
                }
            }
            worst = worst.max((wrap_angle(want.yaw - got.yaw)).abs());
            worst = worst.max((want.yaw_rate - got.yaw_rate).abs());
        }
        worst
    }
}

/// Fully-constrained degree-9 transfer between two flat outputs.
///
/// All five derivatives of each translation axis are interpolated; yaw and yaw
/// rate are interpolated with the remaining yaw derivatives pinned to zero,
/// taking the shortest angular route. An excessively short duration for the
/// commanded displacement still solves but is logged as a conditioning
/// warning.
pub fn transfer_segment(
    start: &FlatOutput,
    end: &FlatOutput,
    duration: f64,
) -> Result<TrajectorySegment, TrajError> {
    if duration <= 0.0 || !duration.is_finite() {
        return Err(TrajError::NonPositiveDuration(duration));
    }
    let axes = [0, 1, 2].map(|axis| {
        boundary_interpolant(&start.axis_derivs(axis), &end.axis_derivs(axis), duration)
    });
    let yaw_target = start.yaw + wrap_angle(end.yaw - start.yaw);
    let yaw = boundary_interpolant(
        &[start.yaw, start.yaw_rate, 0.0, 0.0, 0.0],
        &[yaw_target, end.yaw_rate, 0.0, 0.0, 0.0],
        duration,
    );

    let displacement = (end.position - start.position).norm();
    // Implied mean snap scales as displacement / T^4; past ~1e6 SI the
    // coefficients dwarf the boundary values and accuracy degrades.
    if displacement / duration.powi(4) > 1e6 {
        log::warn!(
            "transfer over {displacement:.3} m in {duration:.4} s is ill-conditioned"
        );
    }

    Ok(TrajectorySegment {
        axes,
        yaw,
        duration,
        kind: SegmentKind::Transfer,
    })
}

/// Duration rule for auto-generated transfers bridging a velocity change of
/// magnitude `dv`: long enough to keep mean acceleration below `accel_max`,
/// never shorter than `min_duration`.
pub fn fillet_duration(dv: f64, accel_max: f64, min_duration: f64) -> f64 {
    (dv / accel_max).max(min_duration)
}

pub use super::poly::TRANSFER_COEFFS as TRANSFER_COEFF_COUNT;
