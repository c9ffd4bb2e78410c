//! Master state machine: event-driven coordination of the four autopilots.
//!
//! The master performs no computations. Each step it parses mission events
//! and, where the (state, event) pair is declared below, transitions and
//! re-targets autopilot activation. Undeclared pairs are explicit no-ops:
//! they are logged and the state is unchanged.

use serde::{Deserialize, Serialize};

use super::{AutopilotKind, MissionEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MasterState {
    OnPadCharging,
    OnPadReady,
    Takeoff,
    Mission,
    Landing,
    EmergencyLanding,
    /// Terminal grounded state: preflight fault, emergency touchdown away
    /// from the pad, or operator stop. Requires human intervention.
    GroundedFault,
}

impl MasterState {
    /// Autopilot owning this state, if it is a flight phase.
    pub fn autopilot(&self) -> Option<AutopilotKind> {
        match self {
            Self::Takeoff => Some(AutopilotKind::Takeoff),
            Self::Mission => Some(AutopilotKind::Mission),
            Self::Landing => Some(AutopilotKind::Landing),
            Self::EmergencyLanding => Some(AutopilotKind::Emergency),
            _ => None,
        }
    }

    pub fn airborne(&self) -> bool {
        self.autopilot().is_some()
    }

    pub const ALL: [MasterState; 7] = [
        Self::OnPadCharging,
        Self::OnPadReady,
        Self::Takeoff,
        Self::Mission,
        Self::Landing,
        Self::EmergencyLanding,
        Self::GroundedFault,
    ];
}

/// Where a failed preflight check leaves the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreflightPolicy {
    /// Back to ready: the next dispatch retries the whole takeoff.
    Retry,
    /// Latch the fault; motors stay off until an operator intervenes.
    Ground,
}

/// The declared event-transition table. `None` means the pair is declared
/// ignored. Pure; policy only affects the preflight-failure edge.
pub fn master_transition(
    state: MasterState,
    event: MissionEvent,
    preflight: PreflightPolicy,
) -> Option<MasterState> {
    use MasterState as S;
    use MissionEvent as E;
    match (state, event) {
        (S::OnPadCharging, E::BatteryCharged) => Some(S::OnPadReady),
        (S::OnPadCharging, E::UserStop) => Some(S::GroundedFault),
        // Voltage sagging while waiting on the pad sends the vehicle back
        // to the charger rather than into a takeoff it cannot finish.
        (S::OnPadReady, E::BatteryLow | E::BatteryCritical) => Some(S::OnPadCharging),
        (S::OnPadReady, E::UserStop) => Some(S::GroundedFault),
        (S::Takeoff, E::TakeoffComplete) => Some(S::Mission),
        (S::Takeoff, E::PreflightFailed) => Some(match preflight {
            PreflightPolicy::Retry => S::OnPadReady,
            PreflightPolicy::Ground => S::GroundedFault,
        }),
        // An aborted takeoff is still airborne (or spinning up); the
        // landing autopilot knows how to bring it back down on the pad.
        (S::Takeoff, E::BatteryLow | E::UserStop) => Some(S::Landing),
        (S::Takeoff, E::BatteryCritical | E::EstimatorFailure) => Some(S::EmergencyLanding),
        (S::Mission, E::MissionComplete | E::BatteryLow | E::UserStop) => Some(S::Landing),
        (S::Mission, E::BatteryCritical | E::EstimatorFailure) => Some(S::EmergencyLanding),
        (S::Landing, E::Touchdown) => Some(S::OnPadCharging),
        (S::Landing, E::BatteryCritical | E::EstimatorFailure) => Some(S::EmergencyLanding),
        (S::EmergencyLanding, E::Touchdown) => Some(S::GroundedFault),
        // Everything else is declared ignored; notably Touchdown during
        // Takeoff (the vehicle starts in pad contact), BatteryLow during
        // Landing (the landing is already the response), and any event in
        // GroundedFault (terminal).
        _ => None,
    }
}

/// One state-machine transition, for the flight log. The master and each
/// autopilot phase machine append these to a shared stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionRecord {
    pub t: f64,
    /// Which machine moved: "master", "takeoff", "mission", "landing",
    /// "emergency".
    pub machine: &'static str,
    pub from: String,
    pub to: String,
    /// Event that caused it, or a non-event cause ("dispatch",
    /// "landing-failed", "phase-complete").
    pub event: String,
}

/// Stateful wrapper: applies the table, tracks the single active autopilot,
/// and accumulates the transition log.
#[derive(Debug, Clone)]
pub struct MasterMachine {
    state: MasterState,
    preflight: PreflightPolicy,
    active: Option<AutopilotKind>,
    log: Vec<TransitionRecord>,
    ignored: u64,
}

/// Activation changes the engine must apply after a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retarget {
    pub abort: Option<AutopilotKind>,
    pub activate: Option<AutopilotKind>,
}

impl MasterMachine {
    pub fn new(initial: MasterState, preflight: PreflightPolicy) -> Self {
        Self {
            state: initial,
            preflight,
            active: initial.autopilot(),
            log: Vec::new(),
            ignored: 0,
        }
    }

    pub fn state(&self) -> MasterState {
        self.state
    }

    /// The at-most-one autopilot currently activated.
    pub fn active_autopilot(&self) -> Option<AutopilotKind> {
        self.active
    }

    pub fn log(&self) -> &[TransitionRecord] {
        &self.log
    }

    pub fn ignored_events(&self) -> u64 {
        self.ignored
    }

    fn apply(&mut self, t: f64, to: MasterState, event: &str) -> Retarget {
        let from = self.state;
        let retarget = Retarget {
            abort: self.active.filter(|ap| Some(*ap) != to.autopilot()),
            activate: to.autopilot().filter(|ap| Some(*ap) != self.active),
        };
        self.state = to;
        self.active = to.autopilot();
        self.log.push(TransitionRecord {
            t,
            machine: "master",
            from: format!("{from:?}"),
            to: format!("{to:?}"),
            event: event.to_string(),
        });
        retarget
    }

    /// Feed one event through the declared table.
    pub fn handle(&mut self, t: f64, event: MissionEvent) -> Option<Retarget> {
        match master_transition(self.state, event, self.preflight) {
            Some(to) => Some(self.apply(t, to, &format!("{event:?}"))),
            None => {
                self.ignored += 1;
                log::debug!("master: {event:?} ignored in {:?}", self.state);
                None
            }
        }
    }

    /// Launch from the ready state. Declared non-event edge, taken by the
    /// engine once the on-pad work is done and the arm policy allows it.
    pub fn dispatch(&mut self, t: f64) -> Option<Retarget> {
        if self.state == MasterState::OnPadReady {
            Some(self.apply(t, MasterState::Takeoff, "dispatch"))
        } else {
            None
        }
    }

    /// Status-channel escalation: the landing autopilot reported failure
    /// (pad never found). Declared non-event edge.
    pub fn landing_failed(&mut self, t: f64) -> Option<Retarget> {
        if self.state == MasterState::Landing {
            Some(self.apply(t, MasterState::EmergencyLanding, "landing-failed"))
        } else {
            None
        }
    }
}
