//! Battery pack model: open-circuit voltage curve with IR drop, motor power
//! draw, and a constant-current / constant-voltage charger on pad contact.

use serde::{Deserialize, Serialize};

use crate::vehicle::VehicleParams;

/// 3S LiPo pack and charger parameters.
///
/// The motor electrical power model is `idle + coeff * thrust^1.5` watts per
/// spinning motor; with the defaults a hover draws the full pack in 15
/// minutes and the 2.5 A charger refills it roughly ten times slower than
/// the hover current drains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    pub capacity_ah: f64,
    /// Open-circuit voltage curve as (state-of-charge, volts) knots.
    pub ocv_knots: Vec<(f64, f64)>,
    pub internal_resistance: f64,
    /// Electronics overhead per spinning motor, W.
    pub motor_power_idle: f64,
    /// Aerodynamic power coefficient, W per N^1.5 of motor thrust.
    pub motor_power_coeff: f64,
    /// Voltage used to convert electrical power to current draw, V.
    pub nominal_voltage: f64,
    /// Constant-current charge rate, A.
    pub charge_current: f64,
    /// Charger voltage ceiling; also the pack-full terminal voltage, V.
    pub full_voltage: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            capacity_ah: 6.2,
            ocv_knots: vec![
                (0.00, 9.50),
                (0.05, 10.60),
                (0.10, 11.10),
                (0.25, 11.35),
                (0.50, 11.55),
                (0.80, 11.80),
                (0.95, 12.20),
                (1.00, 12.60),
            ],
            internal_resistance: 0.015,
            motor_power_idle: 5.0,
            motor_power_coeff: 8.2106,
            nominal_voltage: 11.1,
            charge_current: 2.5,
            full_voltage: 12.6,
        }
    }
}

impl BatteryParams {
    /// Open-circuit voltage at a state of charge, linear between knots.
    pub fn ocv(&self, soc: f64) -> f64 {
        let knots = &self.ocv_knots;
        if soc <= knots[0].0 {
            return knots[0].1;
        }
        for pair in knots.windows(2) {
            let (s0, v0) = pair[0];
            let (s1, v1) = pair[1];
            if soc <= s1 {
                return v0 + (v1 - v0) * (soc - s0) / (s1 - s0);
            }
        }
        knots.last().unwrap().1
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ocv_knots.len() < 2 {
            return Err("ocv curve needs at least two knots".to_string());
        }
        for pair in self.ocv_knots.windows(2) {
            if pair[1].0 <= pair[0].0 || pair[1].1 < pair[0].1 {
                return Err("ocv curve must be increasing".to_string());
            }
        }
        for (name, v) in [
            ("capacity_ah", self.capacity_ah),
            ("internal_resistance", self.internal_resistance),
            ("nominal_voltage", self.nominal_voltage),
            ("charge_current", self.charge_current),
            ("full_voltage", self.full_voltage),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Result of advancing the pack one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStatus {
    pub charge_ah: f64,
    /// Terminal voltage including IR drop, V.
    pub voltage: f64,
    /// Net current, positive discharging, A.
    pub current: f64,
}

/// Electrical power drawn by the motors at their current speeds, W.
/// Motors spinning below a tenth of idle are treated as off.
pub fn motor_power(motor_rpm: &[f64; 4], vehicle: &VehicleParams, params: &BatteryParams) -> f64 {
    let off_floor = 0.1 * vehicle.idle_rpm();
    motor_rpm
        .iter()
        .filter(|&&rpm| rpm > off_floor)
        .map(|&rpm| {
            let thrust = vehicle.thrust_at_rpm(rpm).max(0.0);
            params.motor_power_idle + params.motor_power_coeff * thrust.powf(1.5)
        })
        .sum()
}

/// Advances charge and terminal voltage over `dt` seconds. Discharge is
/// proportional to motor power; with `charging` the pack takes the charger
/// constant current until the terminal voltage reaches the ceiling, then
/// tapers (constant-voltage phase). Charge is clamped to [0, capacity].
pub fn battery_step(
    charge_ah: f64,
    motor_rpm: &[f64; 4],
    charging: bool,
    vehicle: &VehicleParams,
    params: &BatteryParams,
    dt: f64,
) -> BatteryStatus {
    debug_assert!(dt >= 0.0);
    let soc = (charge_ah / params.capacity_ah).clamp(0.0, 1.0);
    let ocv = params.ocv(soc);
    let draw = motor_power(motor_rpm, vehicle, params) / params.nominal_voltage;
    let supply = if charging {
        // CV phase: current that would put the terminal exactly at the
        // ceiling, capped by the CC limit.
        let cv = (params.full_voltage - ocv) / params.internal_resistance;
        cv.clamp(0.0, params.charge_current)
    } else {
        0.0
    };
    let current = draw - supply;
    let charge_ah = (charge_ah - current * dt / 3600.0).clamp(0.0, params.capacity_ah);
    let voltage = (ocv - current * params.internal_resistance).min(params.full_voltage);
    BatteryStatus {
        charge_ah,
        voltage,
        current,
    }
}
