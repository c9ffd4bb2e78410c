//! Deterministic simulation environment: rigid-body truth propagation,
//! gusty wind, battery electrics, pad contact, and synthetic sensors.
//!
//! Everything random flows from one master seed through named substreams,
//! so a run is a pure function of its configuration.

mod battery;
mod dynamics;
mod sensors;
mod wind;

pub use battery::{battery_step, motor_power, BatteryParams, BatteryStatus};
pub use dynamics::{dynamics_step, StepDiagnostics};
pub use sensors::{
    BaroSample, GpsSample, ImuSample, MagSample, SensorBank, SensorBatch, SensorNoise,
};
pub use wind::{wind_step, WindParams, WindState};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;
use crate::vehicle::VehicleParams;
use crate::{Quat, Vec3, GRAVITY};

/// Complete physical state of the vehicle plus battery bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Body-to-world rotation.
    pub attitude: Quat,
    pub body_rates: Vec3,
    pub motor_rpm: [f64; 4],
    pub charge_ah: f64,
    pub voltage: f64,
    /// True while the touchdown predicate holds (resting on the pad).
    pub on_pad: bool,
}

impl Default for TruthState {
    fn default() -> Self {
        let battery = BatteryParams::default();
        Self {
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            attitude: Quat::identity(),
            body_rates: Vec3::zeros(),
            motor_rpm: [0.0; 4],
            charge_ah: battery.capacity_ah,
            voltage: battery.full_voltage,
            on_pad: false,
        }
    }
}

/// Charging pad: a raised square platform, axis-aligned box rotated by `yaw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PadParams {
    /// Center of the pad's top surface; `center.z` is the surface height.
    #[serde(with = "crate::geom::serde_vec3")]
    pub center: Vec3,
    /// Half the side length of the square surface.
    pub half_width: f64,
    /// Rotation of the pad (and its tag bundle) about world z.
    pub yaw: f64,
}

impl Default for PadParams {
    fn default() -> Self {
        Self {
            center: Vec3::new(0.0, 0.0, 0.05),
            half_width: 0.45,
            yaw: 0.0,
        }
    }
}

impl PadParams {
    /// Horizontal offset from the pad center, expressed in the pad frame.
    pub fn offset_of(&self, position: &Vec3) -> Vec3 {
        let d = position - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }
}

/// Ground height under a horizontal position: the pad surface inside its
/// footprint, flat terrain at z = 0 elsewhere.
pub fn surface_height(x: f64, y: f64, pad: &PadParams) -> f64 {
    let off = pad.offset_of(&Vec3::new(x, y, 0.0));
    if off.x.abs() <= pad.half_width && off.y.abs() <= pad.half_width {
        pad.center.z
    } else {
        0.0
    }
}

/// Result of the touchdown predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadContact {
    pub contact: bool,
    /// Offset from the pad center in the pad frame (z relative to surface).
    pub offset: Vec3,
}

/// The vehicle counts as resting on the pad when it sits on the surface
/// (within 5 mm), is nearly still (< 0.1 m/s), and its center is inside
/// the pad footprint.
pub fn pad_contact(truth: &TruthState, pad: &PadParams) -> PadContact {
    let offset = pad.offset_of(&truth.position);
    let contact = offset.z.abs() <= 0.005
        && truth.velocity.norm() < 0.1
        && offset.x.abs() <= pad.half_width
        && offset.y.abs() <= pad.half_width;
    PadContact { contact, offset }
}

/// Everything that defines a simulated world. Two runs with equal configs
/// produce bit-identical histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub vehicle: VehicleParams,
    pub gravity: f64,
    pub wind: WindParams,
    pub battery: BatteryParams,
    pub noise: SensorNoise,
    pub pad: PadParams,
    /// World-frame magnetic field direction (normalized on use).
    #[serde(with = "crate::geom::serde_vec3")]
    pub mag_field: Vec3,
    pub seed: u64,
    /// Integration step, seconds. Must lie in (0, 0.01].
    pub dt: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            gravity: GRAVITY,
            wind: WindParams::default(),
            battery: BatteryParams::default(),
            noise: SensorNoise::default(),
            pad: PadParams::default(),
            mag_field: Vec3::new(0.7, 0.0, -0.7141),
            seed: 0,
            dt: 0.002,
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |msg: &str| Err(WorldError::InvalidConfig(msg.into()));
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return bad("dt must lie in (0, 0.01]");
        }
        if self.gravity <= 0.0 {
            return bad("gravity must be positive");
        }
        if self.mag_field.norm() < 1e-9 {
            return bad("mag_field must be a nonzero direction");
        }
        if self.pad.half_width <= 0.0 {
            return bad("pad half_width must be positive");
        }
        self.vehicle
            .validate()
            .map_err(|e| WorldError::InvalidConfig(e.to_string()))?;
        self.battery
            .validate()
            .map_err(WorldError::InvalidConfig)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("simulation diverged at t = {t:.4} s: {dump}")]
    Diverged { t: f64, dump: String },
}

/// The simulation loop owner. Call [`World::step`] once per tick with the
/// commanded motor speeds, then [`World::sample_sensors`] for whatever
/// measurements came due.
#[derive(Debug, Clone)]
pub struct World {
    pub config: EnvironmentConfig,
    pub t: f64,
    pub truth: TruthState,
    pub wind: WindState,
    /// Diagnostics from the most recent step (energy audit, mean accel).
    pub last_diag: StepDiagnostics,
    /// Pad-frame offset recorded at the most recent landing (contact
    /// rising edge). Stays set until the next touchdown overwrites it.
    pub last_touchdown: Option<Vec3>,
    sensors: SensorBank,
    rng_wind: ChaCha8Rng,
}

impl World {
    pub fn new(config: EnvironmentConfig) -> Result<Self, WorldError> {
        config.validate()?;
        let mut rng_wind = stream(config.seed, "wind");
        let wind = config.wind.init(&mut rng_wind);
        let sensors = SensorBank::new(
            config.noise.clone(),
            config.mag_field,
            config.gravity,
            config.seed,
        );
        Ok(Self {
            t: 0.0,
            truth: TruthState::default(),
            wind,
            last_diag: StepDiagnostics::default(),
            last_touchdown: None,
            sensors,
            rng_wind,
            config,
        })
    }

    /// Advance one tick under the given motor speed commands.
    pub fn step(&mut self, rpm_cmd: &[f64; 4]) -> Result<(), WorldError> {
        let dt = self.config.dt;
        self.wind = wind_step(&self.wind, &self.config.wind, dt, &mut self.rng_wind);
        let (mut next, diag) = dynamics_step(
            &self.truth,
            rpm_cmd,
            self.wind.velocity(),
            &self.config.vehicle,
            self.config.gravity,
            &self.config.pad,
            dt,
        );

        let finite = next.position.iter().all(|v| v.is_finite())
            && next.velocity.iter().all(|v| v.is_finite())
            && next.attitude.coords.iter().all(|v| v.is_finite())
            && next.body_rates.iter().all(|v| v.is_finite())
            && next.motor_rpm.iter().all(|v| v.is_finite());
        if !finite {
            return Err(WorldError::Diverged {
                t: self.t,
                dump: format!("{next:?}"),
            });
        }

        let contact = pad_contact(&next, &self.config.pad);
        if contact.contact && !self.truth.on_pad {
            self.last_touchdown = Some(contact.offset);
        }
        next.on_pad = contact.contact;

        let status = battery_step(
            self.truth.charge_ah,
            &next.motor_rpm,
            next.on_pad,
            &self.config.vehicle,
            &self.config.battery,
            dt,
        );
        next.charge_ah = status.charge_ah;
        next.voltage = status.voltage;

        self.truth = next;
        self.last_diag = diag;
        self.t += dt;
        Ok(())
    }

    /// Sensors due at the current time, synthesized from truth.
    pub fn sample_sensors(&mut self) -> SensorBatch {
        self.sensors
            .sample(self.t, &self.truth, self.last_diag.mean_accel)
    }

    /// Battery terminal status recomputed for the current state.
    pub fn battery_status(&self) -> BatteryStatus {
        battery_step(
            self.truth.charge_ah,
            &self.truth.motor_rpm,
            self.truth.on_pad,
            &self.config.vehicle,
            &self.config.battery,
            0.0,
        )
    }

    /// Current pad contact predicate and offset.
    pub fn contact(&self) -> PadContact {
        pad_contact(&self.truth, &self.config.pad)
    }

    /// Force the GPS drift offset (it otherwise evolves per config).
    pub fn set_gps_drift(&mut self, drift: Vec3) {
        self.sensors.set_gps_drift(drift);
    }

    pub fn gps_drift(&self) -> Vec3 {
        self.sensors.gps_drift
    }
}
