//! Flight autonomy for the recharge-and-refly cycle.
//!
//! A master state machine owns the lifecycle (charge, ready, takeoff,
//! mission, landing, emergency, fault) and delegates the actual flying to
//! four phase autopilots, at most one active at a time. A health monitor
//! turns battery, estimator, and pad telemetry into the events that drive
//! the master. Everything steps at the 20 Hz guidance rate from one
//! deterministic scheduler; autopilot references are evaluated at the
//! (faster) control rate in between.
//!
//! The split of responsibilities is strict: the master performs no
//! computations and the autopilots know nothing about each other. All
//! cross-machine communication happens through [`MissionEvent`]s and the
//! activation/abort edges declared in [`master`].

mod emergency;
mod health;
mod landing;
mod master;
mod mission;
mod takeoff;


pub use emergency::{EmergencyConfig, EmergencyLander, EmergencyPhase};
pub use health::{HealthInputs, HealthMonitor, HealthThresholds};
pub use landing::{LandingAutopilot, LandingConfig, LandingPhase};
pub use master::{
    master_transition, MasterMachine, MasterState, PreflightPolicy, Retarget, TransitionRecord,
};
pub use mission::{MissionAutopilot, MissionConfig};
pub use takeoff::{motor_check_passes, TakeoffAutopilot, TakeoffConfig, TakeoffPhase};

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctrl::ControlReference;
use crate::nav::LandingTarget;
use crate::traj::{mission_elements, MissionParams, TrajError, Waypoint};
use crate::vehicle::VehicleParams;
use crate::Vec3;

/// Everything the master reacts to. Time-stamped by the engine; totally
/// ordered within a run by (tick, emission order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissionEvent {
    BatteryCharged,
    BatteryLow,
    BatteryCritical,
    TakeoffComplete,
    MissionComplete,
    PadVisible,
    Touchdown,
    PreflightFailed,
    EstimatorFailure,
    UserStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AutopilotKind {
    Takeoff,
    Mission,
    Landing,
    Emergency,
}

/// What the vehicle should do with its motors right now. The flight stack
/// maps `Fly` to the cascaded controller tracking [`AutonomyEngine::reference`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlightDirective {
    MotorsOff,
    /// Open-loop spin for the preflight motor check.
    SpinAt { rpm: f64 },
    Fly,
}

/// Touchdown thresholds; see the landing and emergency autopilots.
pub const TOUCHDOWN_MAX_HEIGHT: f64 = 0.3;
pub const TOUCHDOWN_MAX_VZ: f64 = 0.1;
pub const EMERGENCY_MAX_SPEED: f64 = 0.1;

/// Pad-relative touchdown test used by the landing autopilot: close to the
/// pad surface and essentially no vertical motion.
pub fn landing_touchdown(height_above_pad: f64, vertical_speed: f64) -> bool {
    height_above_pad < TOUCHDOWN_MAX_HEIGHT && vertical_speed.abs() < TOUCHDOWN_MAX_VZ
}

/// Terrain-agnostic touchdown test used by the emergency lander: the
/// commanded descent has been arrested by contact.
pub fn emergency_touchdown(velocity: &Vec3) -> bool {
    velocity.norm() < EMERGENCY_MAX_SPEED
}

/// Takeoff location persisted to permanent memory before every liftoff so
/// the return leg works even across a process restart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeRecord {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Mission time the record was taken.
    pub t: f64,
    /// Set once the store accepted the write.
    pub persisted: bool,
}

/// Permanent-memory interface for [`HomeRecord`].
pub trait HomeStore: std::fmt::Debug {
    fn save(&mut self, record: &HomeRecord) -> io::Result<()>;
    fn load(&self) -> io::Result<Option<HomeRecord>>;
}

/// JSON file store, the simulated flash memory.
#[derive(Debug, Clone)]
pub struct JsonHomeStore {
    path: PathBuf,
}

impl JsonHomeStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl HomeStore for JsonHomeStore {
    fn save(&mut self, record: &HomeRecord) -> io::Result<()> {
        let body = serde_json::to_string_pretty(record).map_err(io::Error::other)?;
        std::fs::write(&self.path, body)
    }

    fn load(&self) -> io::Result<Option<HomeRecord>> {
        match std::fs::read_to_string(&self.path) {
            Ok(body) => serde_json::from_str(&body)
                .map(Some)
                .map_err(io::Error::other),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// In-memory store for tests and throwaway runs.
#[derive(Debug, Clone, Default)]
pub struct MemoryHomeStore {
    record: Option<HomeRecord>,
}

impl HomeStore for MemoryHomeStore {
    fn save(&mut self, record: &HomeRecord) -> io::Result<()> {
        self.record = Some(*record);
        Ok(())
    }

    fn load(&self) -> io::Result<Option<HomeRecord>> {
        Ok(self.record)
    }
}

/// What happens after the pack is full and the downlink is done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArmMode {
    /// Keep flying sorties indefinitely (the campaign default).
    Cyclic,
    /// Fly exactly one sortie, then stay ready.
    Single,
    /// Never dispatch on its own.
    Hold,
}

/// The sortie the mission autopilot flies on each dispatch.
#[derive(Debug, Clone)]
pub struct MissionPlan {
    pub waypoints: Vec<Waypoint>,
    pub params: MissionParams,
    /// Re-fly the waypoint list until an event aborts it.
    pub cyclic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutonomyConfig {
    pub thresholds: HealthThresholds,
    pub takeoff: TakeoffConfig,
    pub mission: MissionConfig,
    pub landing: LandingConfig,
    pub emergency: EmergencyConfig,
    /// On-pad data downlink time after the pack is full, s.
    pub download_time: f64,
    pub arm: ArmMode,
    pub preflight: PreflightPolicy,
}

impl Default for AutonomyConfig {
    fn default() -> Self {
        Self {
            thresholds: HealthThresholds::default(),
            takeoff: TakeoffConfig::default(),
            mission: MissionConfig::default(),
            landing: LandingConfig::default(),
            emergency: EmergencyConfig::default(),
            download_time: 20.0,
            arm: ArmMode::Cyclic,
            preflight: PreflightPolicy::Ground,
        }
    }
}

/// Estimator and telemetry snapshot handed to [`AutonomyEngine::step`] once
/// per 20 Hz tick. Positions and velocities are estimates, not truth.
#[derive(Debug, Clone)]
pub struct AutonomyInputs {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub voltage: f64,
    /// State of charge as a fraction of capacity.
    pub charge_frac: f64,
    /// Charger contact.
    pub charging: bool,
    pub motor_rpm: [f64; 4],
    /// A pad tag decoded in the last vision frame.
    pub pad_visible: bool,
    /// Measurements absorbed by the pad-pose filter so far.
    pub pad_samples: u32,
    pub landing_target: Option<LandingTarget>,
    /// Seconds since the last GPS fix.
    pub gps_age: f64,
    /// Largest horizontal position variance from the estimator, m².
    pub pos_var: f64,
}

#[derive(Debug, Clone)]
pub struct AutonomyOutput {
    pub directive: FlightDirective,
    /// The takeoff sequence wants the estimator re-initialized this tick
    /// (covariance reset after the long motionless charge).
    pub request_estimator_reinit: bool,
    /// Events emitted this tick, in the order the master saw them.
    pub events: Vec<(f64, MissionEvent)>,
}

/// Per-tick result from an autopilot.
#[derive(Debug, Default)]
pub struct ApStep {
    pub event: Option<MissionEvent>,
    /// Unrecoverable autopilot failure (landing: pad never found); the
    /// engine escalates through the master's status edge.
    pub failed: bool,
    pub reinit: bool,
    pub home: Option<HomeRecord>,
}

#[derive(Debug, Error)]
pub enum AutonomyError {
    #[error("mission plan rejected: {0}")]
    BadPlan(#[from] TrajError),
}

/// Counters the flight log summarizes per run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EngineStats {
    /// Dispatches (takeoff attempts started).
    pub sorties: u32,
    /// Pad touchdowns (completed cycles).
    pub landings: u32,
    pub emergency_landings: u32,
    /// Mission cycles completed by the most recent mission autopilot.
    pub mission_cycles: u32,
    /// Spin-up attempts consumed by the most recent takeoff.
    pub preflight_attempts: u32,
    /// Volatile recovery transfers inserted by the most recent mission.
    pub recoveries: u32,
}

/// The autonomy engine: one `step` per 20 Hz tick, one `reference` per
/// control tick. Owns the master, the health monitor, the active autopilot,
/// and the home store.
#[derive(Debug)]
pub struct AutonomyEngine {
    config: AutonomyConfig,
    plan: MissionPlan,
    vehicle: VehicleParams,
    gravity: f64,
    master: MasterMachine,
    health: HealthMonitor,
    store: Box<dyn HomeStore>,
    home: Option<HomeRecord>,
    takeoff: Option<TakeoffAutopilot>,
    mission: Option<MissionAutopilot>,
    landing: Option<LandingAutopilot>,
    emergency: Option<EmergencyLander>,
    ready_since: Option<f64>,
    stats: EngineStats,
    flight_log: Vec<TransitionRecord>,
    master_log_seen: usize,
    events: Vec<(f64, MissionEvent)>,
}

impl AutonomyEngine {
    /// Validates the plan up front so mission activation cannot fail later.
    pub fn new(
        config: AutonomyConfig,
        plan: MissionPlan,
        vehicle: VehicleParams,
        gravity: f64,
        store: Box<dyn HomeStore>,
    ) -> Result<Self, AutonomyError> {
        mission_elements(&plan.waypoints, &plan.params)?;
        let home = store.load().unwrap_or_default();
        Ok(Self {
            master: MasterMachine::new(MasterState::OnPadCharging, config.preflight),
            health: HealthMonitor::new(config.thresholds.clone()),
            config,
            plan,
            vehicle,
            gravity,
            store,
            home,
            takeoff: None,
            mission: None,
            landing: None,
            emergency: None,
            ready_since: None,
            stats: EngineStats::default(),
            flight_log: Vec::new(),
            master_log_seen: 0,
            events: Vec::new(),
        })
    }

    pub fn state(&self) -> MasterState {
        self.master.state()
    }

    pub fn master(&self) -> &MasterMachine {
        &self.master
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn home(&self) -> Option<&HomeRecord> {
        self.home.as_ref()
    }

    /// Master and autopilot phase transitions, in emission order.
    pub fn flight_log(&self) -> &[TransitionRecord] {
        &self.flight_log
    }

    /// Every event the master was shown, in order.
    pub fn events(&self) -> &[(f64, MissionEvent)] {
        &self.events
    }

    /// Mission cycles completed by the autopilot currently flying, if any.
    pub fn active_mission_cycles(&self) -> Option<u32> {
        self.mission.as_ref().map(|m| m.cycles_completed())
    }

    /// Current landing phase, if the landing autopilot is active.
    pub fn landing_phase(&self) -> Option<LandingPhase> {
        self.landing.as_ref().map(|l| l.phase())
    }

    /// Setpoint for the cascaded controller; `None` while motors are off or
    /// in open-loop spin. Advances trajectory cursors, so call it with
    /// non-decreasing times.
    pub fn reference(&mut self, t: f64) -> Option<ControlReference> {
        match self.master.active_autopilot()? {
            AutopilotKind::Takeoff => self.takeoff.as_ref().and_then(|ap| ap.reference(t)),
            AutopilotKind::Mission => self
                .mission
                .as_mut()
                .map(|ap| ap.reference(t, self.vehicle.mass, self.gravity)),
            AutopilotKind::Landing => self
                .landing
                .as_mut()
                .map(|ap| ap.reference(t, self.vehicle.mass, self.gravity)),
            AutopilotKind::Emergency => self.emergency.as_ref().map(|ap| ap.reference(t)),
        }
    }

    /// Feed an external event (operator stop, scripted fault) through the
    /// master, applying any autopilot activation changes it causes.
    pub fn inject(&mut self, inp: &AutonomyInputs, event: MissionEvent) {
        self.events.push((inp.t, event));
        if let Some(retarget) = self.master.handle(inp.t, event) {
            self.apply_retarget(retarget, inp);
        }
        self.collect_logs();
    }

    /// One 20 Hz tick: health events, active-autopilot step, master
    /// transitions, dispatch bookkeeping.
    pub fn step(&mut self, inp: &AutonomyInputs) -> AutonomyOutput {
        let mut queue: Vec<MissionEvent> = self.health.tick(&HealthInputs {
            voltage: inp.voltage,
            charge_frac: inp.charge_frac,
            charging: inp.charging,
            airborne: self.master.state().airborne(),
            pad_visible: inp.pad_visible,
            gps_age: inp.gps_age,
            pos_var: inp.pos_var,
        });

        let mut reinit = false;
        let mut ap_failed = false;
        match self.master.active_autopilot() {
            Some(AutopilotKind::Takeoff) => {
                if let Some(ap) = self.takeoff.as_mut() {
                    let out = ap.step(inp, self.store.as_mut());
                    queue.extend(out.event);
                    reinit = out.reinit;
                    if let Some(rec) = out.home {
                        self.home = Some(rec);
                    }
                }
            }
            Some(AutopilotKind::Mission) => {
                if let Some(ap) = self.mission.as_mut() {
                    queue.extend(ap.step(inp).event);
                }
            }
            Some(AutopilotKind::Landing) => {
                if let Some(ap) = self.landing.as_mut() {
                    let out = ap.step(inp);
                    queue.extend(out.event);
                    ap_failed = out.failed;
                }
            }
            Some(AutopilotKind::Emergency) => {
                if let Some(ap) = self.emergency.as_mut() {
                    queue.extend(ap.step(inp).event);
                }
            }
            None => {}
        }

        let mut emitted = Vec::new();
        for event in queue {
            emitted.push((inp.t, event));
            self.events.push((inp.t, event));
            if let Some(retarget) = self.master.handle(inp.t, event) {
                self.apply_retarget(retarget, inp);
            }
            match event {
                MissionEvent::Touchdown if self.master.state() == MasterState::OnPadCharging => {
                    self.stats.landings += 1;
                }
                MissionEvent::Touchdown if self.master.state() == MasterState::GroundedFault => {
                    self.stats.emergency_landings += 1;
                }
                _ => {}
            }
        }

        // The landing autopilot cannot find the pad: escalate. This is a
        // status-channel edge, not a mission event.
        if ap_failed && self.master.state() == MasterState::Landing {
            if let Some(retarget) = self.master.landing_failed(inp.t) {
                self.apply_retarget(retarget, inp);
            }
        }

        // Ready-state bookkeeping: wait out the data downlink, then dispatch
        // if the arm mode allows another sortie.
        if self.master.state() == MasterState::OnPadReady {
            let since = *self.ready_since.get_or_insert(inp.t);
            let armed = match self.config.arm {
                ArmMode::Cyclic => true,
                ArmMode::Single => self.stats.sorties == 0,
                ArmMode::Hold => false,
            };
            if armed && inp.t - since >= self.config.download_time {
                if let Some(retarget) = self.master.dispatch(inp.t) {
                    self.stats.sorties += 1;
                    self.apply_retarget(retarget, inp);
                }
            }
        } else {
            self.ready_since = None;
        }

        self.collect_logs();

        AutonomyOutput {
            directive: self.directive(),
            request_estimator_reinit: reinit,
            events: emitted,
        }
    }

    fn apply_retarget(&mut self, retarget: Retarget, inp: &AutonomyInputs) {
        if let Some(kind) = retarget.abort {
            match kind {
                AutopilotKind::Takeoff => {
                    if let Some(ap) = self.takeoff.take() {
                        self.stats.preflight_attempts = ap.attempts_used();
                        self.flight_log.extend(ap.into_log());
                    }
                }
                AutopilotKind::Mission => {
                    if let Some(mut ap) = self.mission.take() {
                        ap.abort(inp.t);
                        self.stats.mission_cycles = ap.cycles_completed();
                        self.stats.recoveries = ap.recoveries();
                        self.flight_log.extend(ap.into_log());
                    }
                }
                AutopilotKind::Landing => {
                    if let Some(ap) = self.landing.take() {
                        self.flight_log.extend(ap.into_log());
                    }
                }
                AutopilotKind::Emergency => {
                    if let Some(ap) = self.emergency.take() {
                        self.flight_log.extend(ap.into_log());
                    }
                }
            }
        }
        if let Some(kind) = retarget.activate {
            match kind {
                AutopilotKind::Takeoff => {
                    self.takeoff = Some(TakeoffAutopilot::new(
                        self.config.takeoff.clone(),
                        &self.vehicle,
                        inp,
                    ));
                }
                AutopilotKind::Mission => {
                    self.mission = Some(MissionAutopilot::new(
                        self.config.mission.clone(),
                        self.plan.clone(),
                        inp,
                    ));
                }
                AutopilotKind::Landing => {
                    let home = self
                        .home
                        .or_else(|| self.store.load().ok().flatten())
                        .unwrap_or(HomeRecord {
                            x: inp.position.x,
                            y: inp.position.y,
                            yaw: inp.yaw,
                            t: inp.t,
                            persisted: false,
                        });
                    self.landing = Some(LandingAutopilot::new(
                        self.config.landing.clone(),
                        home,
                        inp,
                    ));
                }
                AutopilotKind::Emergency => {
                    self.emergency = Some(EmergencyLander::new(self.config.emergency.clone(), inp));
                }
            }
        }
    }

    fn collect_logs(&mut self) {
        // Phase records from live autopilots, then fresh master records.
        if let Some(ap) = self.takeoff.as_mut() {
            self.flight_log.extend(ap.drain_log());
        }
        if let Some(ap) = self.mission.as_mut() {
            self.flight_log.extend(ap.drain_log());
        }
        if let Some(ap) = self.landing.as_mut() {
            self.flight_log.extend(ap.drain_log());
        }
        if let Some(ap) = self.emergency.as_mut() {
            self.flight_log.extend(ap.drain_log());
        }
        let log = self.master.log();
        if log.len() > self.master_log_seen {
            self.flight_log.extend(log[self.master_log_seen..].iter().cloned());
            self.master_log_seen = log.len();
        }
    }

    fn directive(&self) -> FlightDirective {
        match self.master.active_autopilot() {
            None => FlightDirective::MotorsOff,
            Some(AutopilotKind::Takeoff) => self
                .takeoff
                .as_ref()
                .map(|ap| ap.directive())
                .unwrap_or(FlightDirective::MotorsOff),
            Some(AutopilotKind::Mission) => FlightDirective::Fly,
            Some(AutopilotKind::Landing) => self
                .landing
                .as_ref()
                .map(|ap| ap.directive())
                .unwrap_or(FlightDirective::Fly),
            Some(AutopilotKind::Emergency) => self
                .emergency
                .as_ref()
                .map(|ap| ap.directive())
                .unwrap_or(FlightDirective::Fly),
        }
    }
}
