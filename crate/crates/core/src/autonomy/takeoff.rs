//! Takeoff autopilot: motors-off on the pad to a hover at mission altitude.
//!
//! Phase order is load-bearing. The motor check spins below idle thrust, the
//! estimator is re-initialized after the long motionless charge, and the
//! home record hits permanent memory before the climb is allowed to start,
//! so a takeoff can never out-run its own return address.

use serde::{Deserialize, Serialize};

use super::master::TransitionRecord;
use super::{ApStep, AutonomyInputs, FlightDirective, HomeRecord, HomeStore, MissionEvent};
use crate::ctrl::ControlReference;
use crate::vehicle::VehicleParams;
use crate::Vec3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TakeoffConfig {
    /// Motor-check speed as a fraction of idle RPM; below 1 so the check
    /// cannot produce lift before the home record is saved.
    pub spin_frac: f64,
    /// Acceptance band around the commanded check speed, RPM.
    pub rpm_tolerance: f64,
    /// Ticks to let the motors settle before judging one attempt.
    pub check_ticks: u32,
    pub max_attempts: u32,
    /// Climb rate, m/s.
    pub climb_speed: f64,
    /// Hover altitude ending the takeoff (absolute z), m.
    pub target_altitude: f64,
    /// Completion band: altitude error, m.
    pub complete_pos_tol: f64,
    /// Completion band: speed, m/s.
    pub complete_vel_tol: f64,
}

impl Default for TakeoffConfig {
    fn default() -> Self {
        Self {
            spin_frac: 0.9,
            rpm_tolerance: 400.0,
            check_ticks: 8,
            max_attempts: 10,
            climb_speed: 1.0,
            target_altitude: 4.0,
            complete_pos_tol: 0.2,
            complete_vel_tol: 0.2,
        }
    }
}

/// One spin-up attempt: every motor settled within tolerance of the
/// commanded speed.
pub fn motor_check_passes(nominal: f64, measured: &[f64; 4], tolerance: f64) -> bool {
    measured.iter().all(|rpm| (rpm - nominal).abs() <= tolerance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TakeoffPhase {
    MotorCheck,
    ReinitEstimator,
    PersistHome,
    Climb,
    Done,
    Failed,
}

#[derive(Debug)]
pub struct TakeoffAutopilot {
    cfg: TakeoffConfig,
    check_rpm: f64,
    /// Pad column the climb ascends.
    origin: Vec3,
    yaw: f64,
    phase: TakeoffPhase,
    attempt: u32,
    settle_ticks: u32,
    climb_start: f64,
    climb_z0: f64,
    log: Vec<TransitionRecord>,
}

impl TakeoffAutopilot {
    pub fn new(cfg: TakeoffConfig, vehicle: &VehicleParams, inp: &AutonomyInputs) -> Self {
        let check_rpm = cfg.spin_frac * vehicle.idle_rpm();
        Self {
            cfg,
            check_rpm,
            origin: inp.position,
            yaw: inp.yaw,
            phase: TakeoffPhase::MotorCheck,
            attempt: 1,
            settle_ticks: 0,
            climb_start: inp.t,
            climb_z0: inp.position.z,
            log: Vec::new(),
        }
    }

    pub fn phase(&self) -> TakeoffPhase {
        self.phase
    }

    /// Spin-up attempts consumed (including the successful one).
    pub fn attempts_used(&self) -> u32 {
        self.attempt
    }

    fn enter(&mut self, t: f64, phase: TakeoffPhase, event: &str) {
        self.log.push(TransitionRecord {
            t,
            machine: "takeoff",
            from: format!("{:?}", self.phase),
            to: format!("{phase:?}"),
            event: event.to_string(),
        });
        self.phase = phase;
    }

    pub fn step(&mut self, inp: &AutonomyInputs, store: &mut dyn HomeStore) -> ApStep {
        let mut out = ApStep::default();
        match self.phase {
            TakeoffPhase::MotorCheck => {
                self.settle_ticks += 1;
                if self.settle_ticks >= self.cfg.check_ticks {
                    if motor_check_passes(self.check_rpm, &inp.motor_rpm, self.cfg.rpm_tolerance) {
                        self.enter(inp.t, TakeoffPhase::ReinitEstimator, "motor-check-pass");
                    } else if self.attempt >= self.cfg.max_attempts {
                        self.enter(inp.t, TakeoffPhase::Failed, "motor-check-exhausted");
                        out.event = Some(MissionEvent::PreflightFailed);
                    } else {
                        log::warn!(
                            "takeoff: motor check attempt {} failed (rpm {:?})",
                            self.attempt,
                            inp.motor_rpm
                        );
                        self.attempt += 1;
                        self.settle_ticks = 0;
                    }
                }
            }
            TakeoffPhase::ReinitEstimator => {
                out.reinit = true;
                self.enter(inp.t, TakeoffPhase::PersistHome, "estimator-reinit");
            }
            TakeoffPhase::PersistHome => {
                let record = HomeRecord {
                    x: inp.position.x,
                    y: inp.position.y,
                    yaw: inp.yaw,
                    t: inp.t,
                    // The flag describes the stored copy; a failed write
                    // never surfaces this record at all.
                    persisted: true,
                };
                match store.save(&record) {
                    Ok(()) => {
                        out.home = Some(record);
                        self.climb_start = inp.t;
                        self.climb_z0 = inp.position.z;
                        self.enter(inp.t, TakeoffPhase::Climb, "home-persisted");
                    }
                    Err(e) => {
                        log::error!("takeoff: home record write failed: {e}");
                        self.enter(inp.t, TakeoffPhase::Failed, "home-persist-error");
                        out.event = Some(MissionEvent::PreflightFailed);
                    }
                }
            }
            TakeoffPhase::Climb => {
                let alt_ok =
                    (inp.position.z - self.cfg.target_altitude).abs() < self.cfg.complete_pos_tol;
                let vel_ok = inp.velocity.norm() < self.cfg.complete_vel_tol;
                if alt_ok && vel_ok {
                    self.enter(inp.t, TakeoffPhase::Done, "at-altitude");
                    out.event = Some(MissionEvent::TakeoffComplete);
                }
            }
            TakeoffPhase::Done | TakeoffPhase::Failed => {}
        }
        out
    }

    pub fn directive(&self) -> FlightDirective {
        match self.phase {
            TakeoffPhase::MotorCheck
            | TakeoffPhase::ReinitEstimator
            | TakeoffPhase::PersistHome => FlightDirective::SpinAt {
                rpm: self.check_rpm,
            },
            TakeoffPhase::Climb | TakeoffPhase::Done => FlightDirective::Fly,
            TakeoffPhase::Failed => FlightDirective::MotorsOff,
        }
    }

    /// Velocity-controlled ascent up the pad column; `None` before the climb.
    pub fn reference(&self, t: f64) -> Option<ControlReference> {
        match self.phase {
            TakeoffPhase::Climb | TakeoffPhase::Done => {
                let dz = self.cfg.climb_speed * (t - self.climb_start).max(0.0);
                let z = (self.climb_z0 + dz).min(self.cfg.target_altitude);
                let climbing = z < self.cfg.target_altitude;
                let mut reference =
                    ControlReference::hold(Vec3::new(self.origin.x, self.origin.y, z), self.yaw);
                if climbing {
                    reference.velocity.z = self.cfg.climb_speed;
                }
                Some(reference)
            }
            _ => None,
        }
    }

    pub fn drain_log(&mut self) -> Vec<TransitionRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn into_log(mut self) -> Vec<TransitionRecord> {
        self.drain_log()
    }
}
