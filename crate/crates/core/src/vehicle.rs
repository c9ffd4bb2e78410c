//! Physical description of the airframe shared by the controller and the
//! simulation world.

use serde::{Deserialize, Serialize};

use crate::{Vec3, GRAVITY};

/// Sea-level air density, kg/m^3.
pub const AIR_DENSITY: f64 = 1.225;

/// Quadrotor mass/geometry/actuation parameters.
///
/// Defaults describe a Pelican-class X quadrotor around 1.6 kg. The motor
/// calibration is the quadratic `f = c2 rpm^2 + c1 rpm + c0` per motor, with
/// `c0 < 0` so thrust crosses zero at the idle speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    /// Principal moments of inertia (body axes), kg m^2.
    #[serde(with = "crate::geom::serde_vec3")]
    pub inertia: Vec3,
    /// Center-to-motor distance, m (motors on X diagonals).
    pub arm_length: f64,
    /// Yaw reaction torque per newton of motor thrust, m.
    pub drag_torque_coeff: f64,
    /// First-order motor response time constant, s.
    pub motor_tau: f64,
    /// Thrust calibration `[c2, c1, c0]` in N per (RPM^2, RPM, 1).
    pub motor_coeffs: [f64; 3],
    /// Per-motor thrust ceiling, N.
    pub max_motor_thrust: f64,
    /// Linear aerodynamic drag, N per m/s of relative airspeed.
    pub linear_drag: f64,
    /// Quadratic drag reference area times coefficient, m^2.
    pub drag_area: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1.6,
            inertia: Vec3::new(0.013, 0.013, 0.021),
            arm_length: 0.21,
            drag_torque_coeff: 0.016,
            motor_tau: 0.05,
            motor_coeffs: [1.6e-7, 1.0e-5, -0.17],
            max_motor_thrust: 7.5,
            linear_drag: 0.15,
            drag_area: 0.04,
        }
    }
}

impl VehicleParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * GRAVITY
    }

    /// Thrust produced at a propeller speed, by the raw calibration quadratic
    /// (negative below idle; the world clamps, the map does not).
    pub fn thrust_at_rpm(&self, rpm: f64) -> f64 {
        let [c2, c1, c0] = self.motor_coeffs;
        c2 * rpm * rpm + c1 * rpm + c0
    }

    /// Propeller speed producing thrust `f`, the increasing root of the
    /// calibration quadratic. `f` is expected pre-clamped to the motor range.
    pub fn rpm_for_thrust(&self, f: f64) -> f64 {
        let [c2, c1, c0] = self.motor_coeffs;
        let disc = (c1 * c1 - 4.0 * c2 * (c0 - f)).max(0.0);
        (-c1 + disc.sqrt()) / (2.0 * c2)
    }

    /// Speed at which the calibration crosses zero thrust.
    pub fn idle_rpm(&self) -> f64 {
        self.rpm_for_thrust(0.0)
    }

    pub fn max_rpm(&self) -> f64 {
        self.rpm_for_thrust(self.max_motor_thrust)
    }

    /// Basic physical sanity; called when loading configs.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mass", self.mass),
            ("arm_length", self.arm_length),
            ("drag_torque_coeff", self.drag_torque_coeff),
            ("motor_tau", self.motor_tau),
            ("max_motor_thrust", self.max_motor_thrust),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.inertia.min() <= 0.0 {
            return Err(format!("inertia must be positive, got {:?}", self.inertia));
        }
        if self.linear_drag < 0.0 || self.drag_area < 0.0 {
            return Err("drag coefficients must be non-negative".to_string());
        }
        let [c2, _, c0] = self.motor_coeffs;
        if c2 <= 0.0 || c0 >= 0.0 {
            return Err("motor quadratic must open upward and cross zero thrust".to_string());
        }
        if self.hover_thrust() / 4.0 >= self.max_motor_thrust {
            return Err("vehicle cannot hover below the motor thrust ceiling".to_string());
        }
        Ok(())
    }
}
