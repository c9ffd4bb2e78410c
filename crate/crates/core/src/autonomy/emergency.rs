//! Emergency lander: soft touchdown at the current location.
//!
//! No pad, no vision, no plan. Hold the lateral position captured at
//! engagement and ride a mild constant-velocity descent until contact
//! arrests the motion, then cut motors. The touchdown test is pure
//! velocity, so it works over unknown terrain; it is armed only once a
//! real descent is established so the hover it started from cannot
//! satisfy it.

use serde::{Deserialize, Serialize};

use super::master::TransitionRecord;
use super::{emergency_touchdown, ApStep, AutonomyInputs, FlightDirective, MissionEvent};
use crate::ctrl::ControlReference;
use crate::Vec3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmergencyConfig {
    /// Descent rate, m/s.
    pub descent_speed: f64,
    /// Descent speed (downward) that arms the touchdown test, m/s.
    pub arm_speed: f64,
    /// Arm unconditionally after this long, s.
    pub arm_after: f64,
}

impl Default for EmergencyConfig {
    fn default() -> Self {
        Self {
            descent_speed: 0.3,
            arm_speed: 0.15,
            arm_after: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmergencyPhase {
    Descend,
    Done,
}

#[derive(Debug)]
pub struct EmergencyLander {
    cfg: EmergencyConfig,
    hold: Vec3,
    yaw: f64,
    t0: f64,
    armed: bool,
    phase: EmergencyPhase,
    log: Vec<TransitionRecord>,
}

impl EmergencyLander {
    pub fn new(cfg: EmergencyConfig, inp: &AutonomyInputs) -> Self {
        Self {
            cfg,
            hold: inp.position,
            yaw: inp.yaw,
            t0: inp.t,
            armed: false,
            phase: EmergencyPhase::Descend,
            log: vec![TransitionRecord {
                t: inp.t,
                machine: "emergency",
                from: "Idle".into(),
                to: "Descend".into(),
                event: "engaged".into(),
            }],
        }
    }

    pub fn phase(&self) -> EmergencyPhase {
        self.phase
    }

    pub fn step(&mut self, inp: &AutonomyInputs) -> ApStep {
        let mut out = ApStep::default();
        if self.phase == EmergencyPhase::Done {
            return out;
        }
        if !self.armed
            && (inp.velocity.z <= -self.cfg.arm_speed || inp.t - self.t0 >= self.cfg.arm_after)
        {
            self.armed = true;
        }
        if self.armed && emergency_touchdown(&inp.velocity) {
            self.log.push(TransitionRecord {
                t: inp.t,
                machine: "emergency",
                from: "Descend".into(),
                to: "Done".into(),
                event: "touchdown".into(),
            });
            self.phase = EmergencyPhase::Done;
            out.event = Some(MissionEvent::Touchdown);
        }
        out
    }

    pub fn directive(&self) -> FlightDirective {
        match self.phase {
            EmergencyPhase::Descend => FlightDirective::Fly,
            EmergencyPhase::Done => FlightDirective::MotorsOff,
        }
    }

    pub fn reference(&self, t: f64) -> ControlReference {
        let dz = self.cfg.descent_speed * (t - self.t0).max(0.0);
        let mut reference =
            ControlReference::hold(Vec3::new(self.hold.x, self.hold.y, self.hold.z - dz), self.yaw);
        if self.phase == EmergencyPhase::Descend {
            reference.velocity.z = -self.cfg.descent_speed;
        }
        reference
    }

    pub fn drain_log(&mut self) -> Vec<TransitionRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn into_log(mut self) -> Vec<TransitionRecord> {
        self.drain_log()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(t: f64, position: Vec3, velocity: Vec3) -> AutonomyInputs {
        AutonomyInputs {
            t,
            position,
            velocity,
            yaw: 1.0,
            voltage: 10.0,
            charge_frac: 0.05,
            charging: false,
            motor_rpm: [4000.0; 4],
            pad_visible: false,
            pad_samples: 0,
            landing_target: None,
            gps_age: 0.0,
            pos_var: 0.1,
        }
    }

    #[test]
    fn hover_at_engagement_does_not_count_as_touchdown() {
        let start = Vec3::new(5.0, 2.0, 12.0);
        let mut ap = EmergencyLander::new(
            EmergencyConfig::default(),
            &inputs(0.0, start, Vec3::zeros()),
        );
        // Still hovering, zero velocity: the test is not armed yet.
        for k in 1..20 {
            let t = k as f64 * 0.05;
            assert!(ap.step(&inputs(t, start, Vec3::zeros())).event.is_none());
        }
        assert_eq!(ap.phase(), EmergencyPhase::Descend);
    }

    #[test]
    fn descent_speed_above_threshold_is_not_touchdown() {
        let start = Vec3::new(0.0, 0.0, 10.0);
        let mut ap = EmergencyLander::new(
            EmergencyConfig::default(),
            &inputs(0.0, start, Vec3::zeros()),
        );
        // Established descent at the commanded 0.3 m/s: armed but moving.
        let v = Vec3::new(0.0, 0.0, -0.3);
        for k in 1..100 {
            let t = k as f64 * 0.05;
            let p = start + v * t;
            assert!(ap.step(&inputs(t, p, v)).event.is_none());
        }
    }

    #[test]
    fn arrested_descent_is_touchdown_and_motors_off() {
        let start = Vec3::new(0.0, 0.0, 3.0);
        let mut ap = EmergencyLander::new(
            EmergencyConfig::default(),
            &inputs(0.0, start, Vec3::zeros()),
        );
        ap.step(&inputs(0.05, start, Vec3::new(0.0, 0.0, -0.3))); // arms
        let out = ap.step(&inputs(0.10, Vec3::zeros(), Vec3::new(0.02, 0.0, -0.04)));
        assert_eq!(out.event, Some(MissionEvent::Touchdown));
        assert_eq!(ap.directive(), FlightDirective::MotorsOff);
        // Terminal: no further events.
        assert!(ap.step(&inputs(0.15, Vec3::zeros(), Vec3::zeros())).event.is_none());
    }

    #[test]
    fn twenty_meter_drop_lands_in_about_a_minute() {
        let start = Vec3::new(-3.0, 7.0, 20.0);
        let mut ap = EmergencyLander::new(
            EmergencyConfig::default(),
            &inputs(0.0, start, Vec3::zeros()),
        );
        // Echo the reference with ground contact at z = 0.
        let mut t = 0.0;
        let mut landed_at = None;
        for _ in 0..3000 {
            t += 0.05;
            let reference = ap.reference(t);
            let mut p = reference.position;
            let mut v = reference.velocity;
            if p.z <= 0.0 {
                p.z = 0.0;
                v = Vec3::zeros();
            }
            if ap.step(&inputs(t, p, v)).event == Some(MissionEvent::Touchdown) {
                landed_at = Some(t);
                break;
            }
        }
        let t_land = landed_at.expect("landed");
        // 20 m at 0.3 m/s is 66.7 s; allow the controller-transient slack.
        assert!((60.0..75.0).contains(&t_land), "landed at {t_land:.1}");
        // Lateral hold was kept.
        let reference = ap.reference(t_land);
        assert_eq!(reference.position.x, -3.0);
        assert_eq!(reference.position.y, 7.0);
    }
}
