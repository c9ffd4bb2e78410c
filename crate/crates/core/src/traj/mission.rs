//! Waypoint mission assembly.
//!
//! A mission is a list of waypoints flown as straight constant-velocity legs
//! joined by polynomial fillets. Junction handling:
//!
//! * the first and last waypoints, and any waypoint with a positive hover
//!   time, are rest junctions: the leg decelerates to a stop through an exit
//!   fillet and accelerates away through an entry fillet;
//! * every other interior waypoint is a corner: a single fillet blends the
//!   two cruise velocities without stopping.
//!
//! Fillet durations follow [`fillet_duration`] on the velocity change; each
//! fillet pulls back onto its legs by `v * T / 2` per side, clamped to half
//! the leg length (with the duration shrunk proportionally so short legs do
//! not produce looping references).

use crate::Vec3;

use super::segment::{
    fillet_duration, transfer_segment, FlatOutput, TrajError, TrajectorySegment,
};
use super::sequence::{SequenceElement, TrajectorySequence};

/// Below this length the constant-velocity interior of a leg is dropped and
/// its two fillets join directly.
const MIN_CRUISE_LEN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Vec3,
    /// Seconds to hold position after arriving. Positive values turn an
    /// interior waypoint into a rest junction.
    pub hover: f64,
    /// Yaw to hold at this waypoint; consulted by [`YawMode::Waypoint`] and
    /// as the fallback heading for purely vertical legs.
    pub yaw: Option<f64>,
    /// Cruise speed for the leg leaving this waypoint; defaults to
    /// [`MissionParams::cruise_speed`].
    pub speed: Option<f64>,
}

impl Waypoint {
    pub fn new(position: Vec3) -> Self {
        Self {
            position,
            hover: 0.0,
            yaw: None,
            speed: None,
        }
    }

    pub fn hovering(mut self, seconds: f64) -> Self {
        self.hover = seconds;
        self
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = Some(yaw);
        self
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = Some(speed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YawMode {
    /// Hold one yaw for the whole mission.
    Hold(f64),
    /// Point along the horizontal ground track; vertical legs keep the
    /// previous heading.
    PathHeading,
    /// Sweep between per-waypoint yaws along each leg (unset yaws carry the
    /// previous value forward).
    Waypoint,
}

#[derive(Debug, Clone, Copy)]
pub struct MissionParams {
    pub cruise_speed: f64,
    /// Sizing acceleration for fillets; not a hard dynamic limit.
    pub accel_max: f64,
    pub min_fillet: f64,
    pub yaw: YawMode,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            cruise_speed: 4.0,
            accel_max: 2.0,
            min_fillet: 1.0,
            yaw: YawMode::Waypoint,
        }
    }
}

struct LegPlan {
    dir: Vec3,
    len: f64,
    speed: f64,
    yaw_from: f64,
    yaw_to: f64,
    pull_in: f64,
    pull_out: f64,
}

/// Assemble mission elements; see the module docs for junction rules.
pub fn mission_elements(
    waypoints: &[Waypoint],
    params: &MissionParams,
) -> Result<Vec<SequenceElement>, TrajError> {
    let n = waypoints.len();
    if n < 2 {
        return Err(TrajError::TooFewWaypoints);
    }
    for (i, w) in waypoints.iter().enumerate() {
        if w.hover < 0.0 {
            return Err(TrajError::NegativeHover(i));
        }
        if !(w.position.iter().all(|c| c.is_finite()) && w.hover.is_finite()) {
            return Err(TrajError::DegenerateLeg(i));
        }
    }

    let mut legs = Vec::with_capacity(n - 1);
    let mut heading = waypoints[0].yaw.unwrap_or(0.0);
    let mut wp_yaw_carry = heading;
    let mut wp_yaws = vec![0.0; n];
    wp_yaws[0] = wp_yaw_carry;
    for (i, w) in waypoints.iter().enumerate().skip(1) {
        wp_yaw_carry = w.yaw.unwrap_or(wp_yaw_carry);
        wp_yaws[i] = wp_yaw_carry;
    }
    for i in 0..n - 1 {
        let delta = waypoints[i + 1].position - waypoints[i].position;
        let len = delta.norm();
        if len < MIN_CRUISE_LEN {
            return Err(TrajError::DegenerateLeg(i));
        }
        let speed = waypoints[i].speed.unwrap_or(params.cruise_speed);
        if speed <= 0.0 || !speed.is_finite() {
            return Err(TrajError::NonPositiveSpeed(i));
        }
        let dir = delta / len;
        if dir.xy().norm() > 1e-6 {
            heading = dir.y.atan2(dir.x);
        }
        let (yaw_from, yaw_to) = match params.yaw {
            YawMode::Hold(psi) => (psi, psi),
            YawMode::PathHeading => (heading, heading),
            YawMode::Waypoint => (wp_yaws[i], wp_yaws[i + 1]),
        };
        legs.push(LegPlan {
            dir,
            len,
            speed,
            yaw_from,
            yaw_to,
            pull_in: 0.0,
            pull_out: 0.0,
        });
    }

    let is_rest = |i: usize| i == 0 || i == n - 1 || waypoints[i].hover > 0.0;

    // Yaw held at each rest junction: whatever the adjacent legs sweep
    // to/from, preferring the outgoing side so a hover already faces the next
    // leg.
    let rest_yaws: Vec<f64> = (0..n)
        .map(|i| {
            if i < n - 1 {
                legs[i].yaw_from
            } else {
                legs[i - 1].yaw_to
            }
        })
        .collect();

    // Fillet durations per junction, with pull-backs clamped to half the leg
    // and the duration rescaled by the binding clamp.
    let mut entry_t = vec![0.0; n]; // fillet ending at cruise start of leg i
    let mut exit_t = vec![0.0; n]; // fillet leaving cruise end of leg i-1
    for i in 0..n {
        if is_rest(i) {
            if i < n - 1 {
                let v = legs[i].speed;
                let t = fillet_duration(v, params.accel_max, params.min_fillet);
                let d = v * t / 2.0;
                let s = (legs[i].len / 2.0 / d).min(1.0);
                legs[i].pull_in = d * s;
                entry_t[i] = t * s;
            }
            if i > 0 {
                let v = legs[i - 1].speed;
                let t = fillet_duration(v, params.accel_max, params.min_fillet);
                let d = v * t / 2.0;
                let s = (legs[i - 1].len / 2.0 / d).min(1.0);
                legs[i - 1].pull_out = d * s;
                exit_t[i] = t * s;
            }
        } else {
            let prev = i - 1;
            let dv = (legs[i].dir * legs[i].speed - legs[prev].dir * legs[prev].speed).norm();
            let t = fillet_duration(dv, params.accel_max, params.min_fillet);
            let d_out = legs[prev].speed * t / 2.0;
            let d_in = legs[i].speed * t / 2.0;
            let s = (legs[prev].len / 2.0 / d_out)
                .min(legs[i].len / 2.0 / d_in)
                .min(1.0);
            legs[prev].pull_out = d_out * s;
            legs[i].pull_in = d_in * s;
            entry_t[i] = t * s;
        }
    }

    // Cruise interiors plus their exact boundary states. Fillets target the
    // evaluated states so the chain is continuous to machine precision.
    struct Cruise {
        segment: Option<TrajectorySegment>,
        start: FlatOutput,
        end: FlatOutput,
    }
    let mut cruises = Vec::with_capacity(n - 1);
    for (i, leg) in legs.iter().enumerate() {
        let start_pos = waypoints[i].position + leg.dir * leg.pull_in;
        let cruise_len = leg.len - leg.pull_in - leg.pull_out;
        let velocity = leg.dir * leg.speed;
        if cruise_len > MIN_CRUISE_LEN {
            let segment = TrajectorySegment::constant_velocity(
                start_pos,
                velocity,
                cruise_len / leg.speed,
                leg.yaw_from,
                leg.yaw_to,
            )?;
            let start = segment.evaluate(0.0);
            let end = segment.evaluate(segment.duration());
            cruises.push(Cruise {
                segment: Some(segment),
                start,
                end,
            });
        } else {
            // Leg fully consumed by its fillets: keep the midpoint state so
            // the two fillets still meet at cruise speed.
            let mid = waypoints[i].position + leg.dir * (leg.len / 2.0);
            let start = FlatOutput::cruise(mid, velocity, leg.yaw_from);
            let end = FlatOutput::cruise(mid, velocity, leg.yaw_to);
            cruises.push(Cruise {
                segment: None,
                start,
                end,
            });
        }
    }

    let mut out = Vec::new();
    let push_hover = |out: &mut Vec<SequenceElement>, i: usize| -> Result<(), TrajError> {
        if waypoints[i].hover > 0.0 {
            out.push(SequenceElement::single(TrajectorySegment::hover(
                waypoints[i].position,
                rest_yaws[i],
                waypoints[i].hover,
            )?));
        }
        Ok(())
    };

    for i in 0..n - 1 {
        if i == 0 {
            push_hover(&mut out, 0)?;
            let rest = FlatOutput::hover(waypoints[0].position, rest_yaws[0]);
            out.push(SequenceElement::single(transfer_segment(
                &rest,
                &cruises[0].start,
                entry_t[0],
            )?));
        } else if is_rest(i) {
            let rest = FlatOutput::hover(waypoints[i].position, rest_yaws[i]);
            out.push(SequenceElement::single(transfer_segment(
                &cruises[i - 1].end,
                &rest,
                exit_t[i],
            )?));
            push_hover(&mut out, i)?;
            out.push(SequenceElement::single(transfer_segment(
                &rest,
                &cruises[i].start,
                entry_t[i],
            )?));
        } else {
            out.push(SequenceElement::single(transfer_segment(
                &cruises[i - 1].end,
                &cruises[i].start,
                entry_t[i],
            )?));
        }
        if let Some(segment) = cruises[i].segment.take() {
            out.push(SequenceElement::single(segment));
        }
    }
    let rest = FlatOutput::hover(waypoints[n - 1].position, rest_yaws[n - 1]);
    out.push(SequenceElement::single(transfer_segment(
        &cruises[n - 2].end,
        &rest,
        exit_t[n - 1],
    )?));
    push_hover(&mut out, n - 1)?;

    Ok(out)
}

/// [`mission_elements`] wrapped into a ready-to-fly sequence.
pub fn mission_sequence(
    waypoints: &[Waypoint],
    params: &MissionParams,
) -> Result<TrajectorySequence, TrajError> {
    Ok(TrajectorySequence::new(mission_elements(waypoints, params)?))
}
