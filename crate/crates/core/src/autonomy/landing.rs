//! Landing autopilot: hover near the pad to motors-off on it.
//!
//! Return leg to the persisted home point at the alignment altitude, then a
//! visibility ladder: if the pad pose is already filtered and fresh, align
//! straight away; if a tag is merely visible, hover while the pad filter
//! accumulates; otherwise fly an outward spiral until a tag shows up. Once
//! aligned over the filtered pad center, descend at constant velocity and
//! cut motors when the pad-relative touchdown test trips.

use serde::{Deserialize, Serialize};

use super::master::TransitionRecord;
use super::{landing_touchdown, ApStep, AutonomyInputs, FlightDirective, HomeRecord, MissionEvent};
use crate::ctrl::ControlReference;
use crate::nav::LandingTarget;
use crate::traj::{fillet_duration, transfer_segment, FlatOutput, TrajectorySegment};
use crate::Vec3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandingConfig {
    /// Alignment altitude (absolute z) for pad acquisition, m.
    pub h_align: f64,
    /// Return-transfer sizing acceleration, m/s².
    pub accel_max: f64,
    /// Shortest return transfer, s.
    pub min_duration: f64,
    /// Radial growth of the search spiral per turn, m.
    pub spiral_pitch: f64,
    /// Ground speed along the spiral, m/s.
    pub spiral_speed: f64,
    /// Search time before the autopilot gives up, s.
    pub spiral_budget: f64,
    /// Hover time allowed for pad-filter convergence, s.
    pub acquire_timeout: f64,
    /// Pad-filter samples required before aligning.
    pub k_min: u32,
    /// Lateral capture band around the pad center, m.
    pub align_xy_tol: f64,
    /// Vertical capture band around the alignment altitude, m.
    pub align_z_tol: f64,
    /// Speed band for starting the descent, m/s.
    pub align_speed_tol: f64,
    /// Constant descent rate, m/s.
    pub descent_speed: f64,
}

impl Default for LandingConfig {
    fn default() -> Self {
        Self {
            h_align: 4.0,
            accel_max: 2.0,
            min_duration: 1.0,
            spiral_pitch: 1.0,
            spiral_speed: 1.0,
            spiral_budget: 120.0,
            acquire_timeout: 30.0,
            k_min: 20,
            align_xy_tol: 0.15,
            align_z_tol: 0.3,
            align_speed_tol: 0.3,
            descent_speed: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandingPhase {
    Return,
    Search,
    Acquire,
    Align,
    Descend,
    Done,
    Failed,
}

#[derive(Debug)]
pub struct LandingAutopilot {
    cfg: LandingConfig,
    home: HomeRecord,
    phase: LandingPhase,
    return_seg: TrajectorySegment,
    return_t0: f64,
    /// Spiral parameter; radius = pitch/(2π) · theta.
    theta: f64,
    search_t0: f64,
    acquire_t0: f64,
    acquire_hold: Vec3,
    /// Last pad pose handed to us; survives vision dropouts.
    target: Option<LandingTarget>,
    descend_t0: f64,
    descend_z0: f64,
    last_step_t: f64,
    log: Vec<TransitionRecord>,
}

impl LandingAutopilot {
    pub fn new(cfg: LandingConfig, home: HomeRecord, inp: &AutonomyInputs) -> Self {
        let here = FlatOutput {
            position: inp.position,
            velocity: inp.velocity,
            ..FlatOutput::hover(inp.position, inp.yaw)
        };
        let goal = FlatOutput::hover(Vec3::new(home.x, home.y, cfg.h_align), home.yaw);
        let dv = (goal.velocity - here.velocity)
            .norm()
            .max((goal.position - here.position).norm() / 4.0);
        let duration = fillet_duration(dv, cfg.accel_max, cfg.min_duration);
        let return_seg = transfer_segment(&here, &goal, duration).unwrap_or_else(|e| {
            // Non-finite activation state; hold in place and let the search
            // (or the master's escalation) deal with it.
            log::error!("landing: return transfer rejected ({e}); holding");
            TrajectorySegment::hover(inp.position, inp.yaw, cfg.min_duration)
                .expect("hover segment")
        });
        Self {
            descend_z0: cfg.h_align,
            cfg,
            home,
            phase: LandingPhase::Return,
            return_seg,
            return_t0: inp.t,
            theta: 0.0,
            search_t0: inp.t,
            acquire_t0: inp.t,
            acquire_hold: goal.position,
            target: inp.landing_target,
            descend_t0: inp.t,
            last_step_t: inp.t,
            log: Vec::new(),
        }
    }

    pub fn phase(&self) -> LandingPhase {
        self.phase
    }

    fn enter(&mut self, t: f64, phase: LandingPhase, event: &str) {
        self.log.push(TransitionRecord {
            t,
            machine: "landing",
            from: format!("{:?}", self.phase),
            to: format!("{phase:?}"),
            event: event.to_string(),
        });
        self.phase = phase;
    }

    fn spiral_center(&self) -> Vec3 {
        Vec3::new(self.home.x, self.home.y, self.cfg.h_align)
    }

    fn spiral_point(&self) -> (Vec3, Vec3) {
        let a = self.cfg.spiral_pitch / std::f64::consts::TAU;
        let r = a * self.theta;
        let (sin, cos) = self.theta.sin_cos();
        let position = self.spiral_center() + Vec3::new(r * cos, r * sin, 0.0);
        // Tangent of r(θ)·(cosθ, sinθ): a·(cosθ − θ·sinθ, sinθ + θ·cosθ).
        let tangent = Vec3::new(cos - self.theta * sin, sin + self.theta * cos, 0.0);
        let velocity = if tangent.norm() > 1e-9 {
            tangent.normalize() * self.cfg.spiral_speed
        } else {
            Vec3::zeros()
        };
        (position, velocity)
    }

    /// Pad filtered, fresh, and fed enough to align on.
    fn pad_locked(&self, inp: &AutonomyInputs) -> bool {
        inp.landing_target.map(|t| !t.stale).unwrap_or(false) && inp.pad_samples >= self.cfg.k_min
    }

    pub fn step(&mut self, inp: &AutonomyInputs) -> ApStep {
        let mut out = ApStep::default();
        let dt = (inp.t - self.last_step_t).clamp(0.0, 0.1);
        self.last_step_t = inp.t;
        if let Some(target) = inp.landing_target {
            self.target = Some(target);
        }

        match self.phase {
            LandingPhase::Return => {
                if inp.t - self.return_t0 >= self.return_seg.duration() {
                    if self.pad_locked(inp) {
                        self.enter(inp.t, LandingPhase::Align, "pad-locked");
                    } else if inp.pad_visible {
                        self.acquire_t0 = inp.t;
                        self.acquire_hold = self.return_seg.evaluate(self.return_seg.duration()).position;
                        self.enter(inp.t, LandingPhase::Acquire, "pad-visible");
                    } else {
                        self.search_t0 = inp.t;
                        self.theta = 0.0;
                        self.enter(inp.t, LandingPhase::Search, "pad-unseen");
                    }
                }
            }
            LandingPhase::Search => {
                // Constant ground speed: ds = a·√(1+θ²)·dθ.
                let a = self.cfg.spiral_pitch / std::f64::consts::TAU;
                let dtheta =
                    self.cfg.spiral_speed * dt / (a * (1.0 + self.theta * self.theta).sqrt());
                self.theta += dtheta;
                if inp.pad_visible {
                    self.acquire_t0 = inp.t;
                    self.acquire_hold = self.spiral_point().0;
                    self.enter(inp.t, LandingPhase::Acquire, "pad-visible");
                } else if inp.t - self.search_t0 > self.cfg.spiral_budget {
                    self.enter(inp.t, LandingPhase::Failed, "search-budget-exhausted");
                }
            }
            LandingPhase::Acquire => {
                if self.pad_locked(inp) {
                    self.enter(inp.t, LandingPhase::Align, "pad-locked");
                } else if inp.t - self.acquire_t0 > self.cfg.acquire_timeout {
                    self.enter(inp.t, LandingPhase::Failed, "acquire-timeout");
                }
            }
            LandingPhase::Align => {
                if let Some(target) = self.target {
                    let lateral = (inp.position.xy() - target.position.xy()).norm();
                    let vertical = (inp.position.z - self.cfg.h_align).abs();
                    if lateral < self.cfg.align_xy_tol
                        && vertical < self.cfg.align_z_tol
                        && inp.velocity.norm() < self.cfg.align_speed_tol
                    {
                        self.descend_t0 = inp.t;
                        self.descend_z0 = inp.position.z;
                        self.enter(inp.t, LandingPhase::Descend, "aligned");
                    }
                }
            }
            LandingPhase::Descend => {
                let pad_z = self.target.map(|t| t.position.z).unwrap_or(0.0);
                if landing_touchdown(inp.position.z - pad_z, inp.velocity.z) {
                    self.enter(inp.t, LandingPhase::Done, "touchdown");
                    out.event = Some(MissionEvent::Touchdown);
                }
            }
            LandingPhase::Done => {}
            LandingPhase::Failed => {}
        }
        out.failed = self.phase == LandingPhase::Failed;
        out
    }

    pub fn directive(&self) -> FlightDirective {
        match self.phase {
            LandingPhase::Done => FlightDirective::MotorsOff,
            _ => FlightDirective::Fly,
        }
    }

    pub fn reference(&mut self, t: f64, mass: f64, gravity: f64) -> ControlReference {
        match self.phase {
            LandingPhase::Return => {
                let local = (t - self.return_t0).clamp(0.0, self.return_seg.duration());
                let flat = self.return_seg.evaluate(local);
                ControlReference::from_flat(&flat, mass, gravity)
                    .unwrap_or_else(|_| ControlReference::hold(flat.position, flat.yaw))
            }
            LandingPhase::Search => {
                let (position, velocity) = self.spiral_point();
                let mut reference = ControlReference::hold(position, self.home.yaw);
                reference.velocity = velocity;
                reference
            }
            LandingPhase::Acquire => ControlReference::hold(self.acquire_hold, self.home.yaw),
            LandingPhase::Align => {
                let (x, y, yaw) = self
                    .target
                    .map(|p| (p.position.x, p.position.y, p.yaw))
                    .unwrap_or((self.acquire_hold.x, self.acquire_hold.y, self.home.yaw));
                ControlReference::hold(Vec3::new(x, y, self.cfg.h_align), yaw)
            }
            LandingPhase::Descend | LandingPhase::Done => {
                let (x, y, pad_z, yaw) = self
                    .target
                    .map(|p| (p.position.x, p.position.y, p.position.z, p.yaw))
                    .unwrap_or((self.acquire_hold.x, self.acquire_hold.y, 0.0, self.home.yaw));
                let dz = self.cfg.descent_speed * (t - self.descend_t0).max(0.0);
                // Push a little through the surface so contact is firm; the
                // touchdown test cuts motors before this bites.
                let z = (self.descend_z0 - dz).max(pad_z - 0.5);
                let mut reference = ControlReference::hold(Vec3::new(x, y, z), yaw);
                if z > pad_z - 0.5 && self.phase == LandingPhase::Descend {
                    reference.velocity.z = -self.cfg.descent_speed;
                }
                reference
            }
            LandingPhase::Failed => ControlReference::hold(self.spiral_point().0, self.home.yaw),
        }
    }

    pub fn drain_log(&mut self) -> Vec<TransitionRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn into_log(mut self) -> Vec<TransitionRecord> {
        self.drain_log()
    }
}
