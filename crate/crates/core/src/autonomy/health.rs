//! System health observer: watches battery, estimator, and pad telemetry
//! and turns threshold crossings into mission events.
//!
//! Every emission is latched and qualified. A crossing must persist for
//! `qualify_ticks` before the event fires, fires once, and re-arms only
//! after the signal recovers past the threshold plus hysteresis. That keeps
//! sensor ripple and load sag from chattering the master state machine.

use serde::{Deserialize, Serialize};

use super::MissionEvent;

/// Trip points for a 3-cell pack plus estimator staleness policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealthThresholds {
    /// Pack-full terminal voltage, V.
    pub v_full: f64,
    /// Return-and-land voltage, V.
    pub v_low: f64,
    /// Land-in-place voltage, V.
    pub v_critical: f64,
    /// Recovery margin above a trip point before it re-arms, V.
    pub hysteresis: f64,
    /// Consecutive 20 Hz ticks a crossing must persist before it fires.
    pub qualify_ticks: u32,
    /// State of charge treated as full, as a fraction of capacity.
    pub charge_full_frac: f64,
    /// GPS silence in flight that counts as estimator failure, s.
    pub gps_stale_after: f64,
    /// Position-variance ceiling before the estimate is declared unusable, m².
    pub pos_var_limit: f64,
}

impl Default for HealthThresholds {
    fn default() -> Self {
        Self {
            v_full: 12.6,
            v_low: 10.8,
            v_critical: 10.2,
            hysteresis: 0.15,
            qualify_ticks: 20,
            charge_full_frac: 0.99,
            gps_stale_after: 2.0,
            pos_var_limit: 25.0,
        }
    }
}

/// Telemetry snapshot the monitor inspects each tick.
#[derive(Debug, Clone, Copy)]
pub struct HealthInputs {
    pub voltage: f64,
    /// State of charge as a fraction of capacity.
    pub charge_frac: f64,
    /// Charger contact (implies pad contact).
    pub charging: bool,
    pub airborne: bool,
    pub pad_visible: bool,
    /// Seconds since the last GPS fix reached the estimator.
    pub gps_age: f64,
    /// Largest horizontal position variance reported by the estimator, m².
    pub pos_var: f64,
}

/// Latched under-voltage detector. Counts ticks below the trip point,
/// freezes inside the hysteresis band, resets above it.
#[derive(Debug, Clone, Default)]
struct TripLatch {
    ticks: u32,
    latched: bool,
}

impl TripLatch {
    /// Returns true on the single qualifying tick.
    fn update(&mut self, below: bool, recovered: bool, qualify: u32) -> bool {
        if recovered {
            self.ticks = 0;
            self.latched = false;
            return false;
        }
        if below {
            self.ticks = self.ticks.saturating_add(1);
            if self.ticks >= qualify && !self.latched {
                self.latched = true;
                return true;
            }
        }
        // Between the trip point and the recovery level: hold.
        false
    }

    fn force(&mut self) {
        self.latched = true;
    }
}

#[derive(Debug, Clone)]
pub struct HealthMonitor {
    thresholds: HealthThresholds,
    low: TripLatch,
    critical: TripLatch,
    charged: TripLatch,
    estimator: TripLatch,
    pad_was_visible: bool,
}

impl HealthMonitor {
    pub fn new(thresholds: HealthThresholds) -> Self {
        Self {
            thresholds,
            low: TripLatch::default(),
            critical: TripLatch::default(),
            charged: TripLatch::default(),
            estimator: TripLatch::default(),
            pad_was_visible: false,
        }
    }

    pub fn thresholds(&self) -> &HealthThresholds {
        &self.thresholds
    }

    /// Inspect one telemetry snapshot. Events come out most severe first;
    /// when the critical threshold fires, the low event is swallowed (the
    /// master would ignore it anyway once in EmergencyLanding, but the log
    /// stays honest about which threshold acted).
    pub fn tick(&mut self, inp: &HealthInputs) -> Vec<MissionEvent> {
        let th = &self.thresholds;
        let mut events = Vec::new();

        let critical_fired = self.critical.update(
            inp.voltage < th.v_critical,
            inp.voltage > th.v_critical + th.hysteresis,
            th.qualify_ticks,
        );
        let low_fired = self.low.update(
            inp.voltage < th.v_low,
            inp.voltage > th.v_low + th.hysteresis,
            th.qualify_ticks,
        );
        if critical_fired {
            events.push(MissionEvent::BatteryCritical);
            self.low.force();
        } else if low_fired {
            events.push(MissionEvent::BatteryLow);
        }

        let unhealthy = inp.airborne
            && (inp.gps_age > th.gps_stale_after || inp.pos_var > th.pos_var_limit);
        // Staleness needs no qualification: the age threshold is itself a
        // persistence window.
        if self.estimator.update(unhealthy, !unhealthy, 1) {
            events.push(MissionEvent::EstimatorFailure);
        }

        // Full charge: once per pad visit. Leaving the charger re-arms it.
        let full = inp.charging
            && (inp.charge_frac >= th.charge_full_frac || inp.voltage >= th.v_full - 1e-9);
        if self.charged.update(full, !inp.charging, th.qualify_ticks) {
            events.push(MissionEvent::BatteryCharged);
        }

        if inp.airborne && inp.pad_visible && !self.pad_was_visible {
            events.push(MissionEvent::PadVisible);
        }
        self.pad_was_visible = inp.airborne && inp.pad_visible;

        events
    }
}
