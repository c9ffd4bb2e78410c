//! Mission autopilot: flies the sortie plan through the trajectory
//! sequencer.
//!
//! On activation it bridges from wherever the estimate says the vehicle is
//! into the first waypoint, then plays the mission elements. Cyclic plans
//! re-arm themselves each time the sequence drains; once-mode plans report
//! completion instead. Large tracking errors are absorbed by a one-shot
//! volatile transfer back onto the paused reference.

use serde::{Deserialize, Serialize};

use super::master::TransitionRecord;
use super::{ApStep, AutonomyInputs, MissionEvent, MissionPlan};
use crate::ctrl::ControlReference;
use crate::traj::{
    fillet_duration, mission_elements, transfer_segment, BridgeParams, FlatOutput,
    SequenceElement, TrajectorySegment, TrajectorySequence,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// Estimate-to-reference distance that triggers a recovery transfer, m.
    pub track_error_limit: f64,
    /// Minimum spacing between recovery insertions, s.
    pub recovery_cooldown: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            track_error_limit: 1.0,
            recovery_cooldown: 10.0,
        }
    }
}

#[derive(Debug)]
pub struct MissionAutopilot {
    cfg: MissionConfig,
    plan: MissionPlan,
    seq: TrajectorySequence,
    cycles: u32,
    recoveries: u32,
    last_recovery: Option<f64>,
    aborted: bool,
    complete: bool,
    log: Vec<TransitionRecord>,
}

impl MissionAutopilot {
    /// The plan was validated when the engine was built, so element
    /// assembly cannot fail here.
    pub fn new(cfg: MissionConfig, plan: MissionPlan, inp: &AutonomyInputs) -> Self {
        let elements =
            mission_elements(&plan.waypoints, &plan.params).expect("plan validated at engine construction");
        // Seed with a short hold at the current estimate, then let the
        // sequencer bridge into the first waypoint.
        let hold = TrajectorySegment::hover(inp.position, inp.yaw, 0.05)
            .expect("finite activation state");
        let mut seq = TrajectorySequence::new(vec![SequenceElement::single(hold)]);
        seq.replace_upcoming(inp.t, elements)
            .expect("bridge from activation hold");
        let log = vec![TransitionRecord {
            t: inp.t,
            machine: "mission",
            from: "Idle".into(),
            to: "Flying".into(),
            event: "activated".into(),
        }];
        Self {
            cfg,
            plan,
            seq,
            cycles: 0,
            recoveries: 0,
            last_recovery: None,
            aborted: false,
            complete: false,
            log,
        }
    }

    /// Full passes of the waypoint list completed so far.
    pub fn cycles_completed(&self) -> u32 {
        self.cycles
    }

    /// Recovery transfers inserted so far.
    pub fn recoveries(&self) -> u32 {
        self.recoveries
    }

    pub fn aborted(&self) -> bool {
        self.aborted
    }

    fn record(&mut self, t: f64, from: &str, to: &str, event: &str) {
        self.log.push(TransitionRecord {
            t,
            machine: "mission",
            from: from.into(),
            to: to.into(),
            event: event.into(),
        });
    }

    pub fn step(&mut self, inp: &AutonomyInputs) -> ApStep {
        let mut out = ApStep::default();
        if self.aborted || self.complete {
            return out;
        }

        if self.seq.is_finished() {
            if self.plan.cyclic {
                self.cycles += 1;
                let elements = mission_elements(&self.plan.waypoints, &self.plan.params)
                    .expect("plan validated at engine construction");
                self.seq
                    .replace_upcoming(inp.t, elements)
                    .expect("re-arm bridge from terminal hold");
                self.record(inp.t, "Flying", "Flying", "cycle-complete");
            } else {
                self.complete = true;
                self.record(inp.t, "Flying", "Complete", "plan-finished");
                out.event = Some(MissionEvent::MissionComplete);
            }
            return out;
        }

        // Tracking watchdog: if the estimate has fallen far off the
        // reference, pause the element and fly a one-shot transfer back to
        // the paused point instead of letting the controller yank.
        let reference = self.seq.peek(inp.t);
        let error = (inp.position - reference.position).norm();
        let cooled = self
            .last_recovery
            .map(|t0| inp.t - t0 >= self.cfg.recovery_cooldown)
            .unwrap_or(true);
        if error > self.cfg.track_error_limit && !self.seq.volatile_active() && cooled {
            let here = FlatOutput {
                position: inp.position,
                velocity: inp.velocity,
                ..FlatOutput::hover(inp.position, inp.yaw)
            };
            let bridge = BridgeParams::default();
            let dv = (reference.velocity - here.velocity)
                .norm()
                .max((reference.position - here.position).norm() / 4.0);
            let duration = fillet_duration(dv, bridge.accel_max, bridge.min_duration);
            match transfer_segment(&here, &reference, duration) {
                Ok(segment) => {
                    if self.seq.insert_volatile(segment, inp.t).is_ok() {
                        self.recoveries += 1;
                        self.last_recovery = Some(inp.t);
                        self.record(inp.t, "Flying", "Flying", "recovery-transfer");
                        log::warn!(
                            "mission: {error:.2} m tracking error, inserting recovery transfer"
                        );
                    }
                }
                Err(e) => log::error!("mission: recovery transfer rejected: {e}"),
            }
        }
        out
    }

    /// Stop the sortie: cyclic elements are aborted so the sequencer is
    /// left in a sane bridged state, and the autopilot goes quiet.
    pub fn abort(&mut self, t: f64) {
        if self.aborted {
            return;
        }
        self.aborted = true;
        match self.seq.abort_cyclic(t) {
            Ok(did) => {
                if did {
                    log::info!("mission: cyclic element aborted at t={t:.2}");
                }
            }
            Err(e) => log::warn!("mission: abort_cyclic rejected: {e}"),
        }
        self.record(t, "Flying", "Aborted", "abort");
    }

    pub fn reference(&mut self, t: f64, mass: f64, gravity: f64) -> ControlReference {
        let flat = self.seq.evaluate(t);
        ControlReference::from_flat(&flat, mass, gravity)
            .unwrap_or_else(|_| ControlReference::hold(flat.position, flat.yaw))
    }

    pub fn drain_log(&mut self) -> Vec<TransitionRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn into_log(mut self) -> Vec<TransitionRecord> {
        self.drain_log()
    }
}
