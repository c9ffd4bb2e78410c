//! Sensor synthesis: truth-derived measurements plus bias states and seeded
//! noise, emitted on fixed per-sensor schedules.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TruthState;
use crate::rng::stream;
use crate::{Quat, Vec3};

/// Noise intensities and sample rates for the sensor suite. Sigmas are
/// per-sample standard deviations; bias random walks are intensities per
/// sqrt(second). A rate of zero disables a sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    pub gyro_sigma: f64,
    pub accel_sigma: f64,
    pub gyro_bias_init: f64,
    pub accel_bias_init: f64,
    pub gyro_bias_rw: f64,
    pub accel_bias_rw: f64,
    pub gps_pos_sigma: f64,
    pub gps_vel_sigma: f64,
    /// GPS position drift random walk, m per sqrt(s). Zero disables drift.
    pub gps_drift_rw: f64,
    pub baro_sigma: f64,
    pub baro_bias_init: f64,
    pub baro_bias_rw: f64,
    pub mag_sigma: f64,
    pub imu_hz: f64,
    pub gps_hz: f64,
    pub baro_hz: f64,
    pub mag_hz: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            gyro_sigma: 0.003,
            accel_sigma: 0.03,
            gyro_bias_init: 0.005,
            accel_bias_init: 0.05,
            gyro_bias_rw: 1e-5,
            accel_bias_rw: 1e-4,
            gps_pos_sigma: 0.2,
            gps_vel_sigma: 0.1,
            gps_drift_rw: 0.0,
            baro_sigma: 0.15,
            baro_bias_init: 0.3,
            baro_bias_rw: 0.003,
            mag_sigma: 0.01,
            imu_hz: 200.0,
            gps_hz: 5.0,
            baro_hz: 20.0,
            mag_hz: 20.0,
        }
    }
}

impl SensorNoise {
    /// All noise and bias terms zeroed; rates kept. Samples then equal the
    /// analytic truth projections exactly.
    pub fn silent() -> Self {
        Self {
            gyro_sigma: 0.0,
            accel_sigma: 0.0,
            gyro_bias_init: 0.0,
            accel_bias_init: 0.0,
            gyro_bias_rw: 0.0,
            accel_bias_rw: 0.0,
            gps_pos_sigma: 0.0,
            gps_vel_sigma: 0.0,
            gps_drift_rw: 0.0,
            baro_sigma: 0.0,
            baro_bias_init: 0.0,
            baro_bias_rw: 0.0,
            mag_sigma: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    /// Specific force in the body frame (reads +g upward at rest).
    pub accel: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsSample {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaroSample {
    pub t: f64,
    pub altitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagSample {
    pub t: f64,
    /// World magnetic field direction expressed in the body frame.
    pub field_body: Vec3,
}

/// Sensor outputs that became due on one simulation tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensorBatch {
    pub imu: Option<ImuSample>,
    pub gps: Option<GpsSample>,
    pub baro: Option<BaroSample>,
    pub mag: Option<MagSample>,
}

impl SensorBatch {
    pub fn any(&self) -> bool {
        self.imu.is_some() || self.gps.is_some() || self.baro.is_some() || self.mag.is_some()
    }
}

/// Owns the sensor bias states, schedules and noise streams. Each sensor
/// draws from its own named stream so enabling or disabling one never
/// perturbs the others.
#[derive(Debug, Clone)]
pub struct SensorBank {
    noise: SensorNoise,
    mag_field: Vec3,
    gravity: f64,
    rng_imu: ChaCha8Rng,
    rng_gps: ChaCha8Rng,
    rng_baro: ChaCha8Rng,
    rng_mag: ChaCha8Rng,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub baro_bias: f64,
    pub gps_drift: Vec3,
    next_imu: f64,
    next_gps: f64,
    next_baro: f64,
    next_mag: f64,
}

fn gauss3(rng: &mut impl Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

impl SensorBank {
    pub fn new(noise: SensorNoise, mag_field: Vec3, gravity: f64, seed: u64) -> Self {
        let mut rng_init = stream(seed, "sensor-init");
        let gyro_bias = noise.gyro_bias_init * gauss3(&mut rng_init);
        let accel_bias = noise.accel_bias_init * gauss3(&mut rng_init);
        let baro_bias: f64 = noise.baro_bias_init * rng_init.sample::<f64, _>(StandardNormal);
        Self {
            rng_imu: stream(seed, "sensor-imu"),
            rng_gps: stream(seed, "sensor-gps"),
            rng_baro: stream(seed, "sensor-baro"),
            rng_mag: stream(seed, "sensor-mag"),
            gyro_bias,
            accel_bias,
            baro_bias,
            gps_drift: Vec3::zeros(),
            next_imu: 0.0,
            next_gps: 0.0,
            next_baro: 0.0,
            next_mag: 0.0,
            noise,
            mag_field: mag_field.normalize(),
            gravity,
        }
    }

    pub fn set_gps_drift(&mut self, drift: Vec3) {
        self.gps_drift = drift;
    }

    /// Emits every sensor that has come due by time `t`. `mean_accel` is
    /// the vehicle acceleration over the last step (contact included), so
    /// the accelerometer reports specific force: at rest it reads +g along
    /// body z, the reaction to gravity.
    pub fn sample(&mut self, t: f64, truth: &TruthState, mean_accel: Vec3) -> SensorBatch {
        let mut batch = SensorBatch::default();
        let due = |next: &mut f64, hz: f64| -> bool {
            if hz <= 0.0 {
                return false;
            }
            if t >= *next - 1e-9 {
                *next += 1.0 / hz;
                true
            } else {
                false
            }
        };
        let body_from_world: Quat = truth.attitude.inverse();

        if due(&mut self.next_imu, self.noise.imu_hz) {
            let n = &self.noise;
            let gravity_vec = Vec3::new(0.0, 0.0, -self.gravity);
            let specific_force = body_from_world.transform_vector(&(mean_accel - gravity_vec));
            let gyro = truth.body_rates + self.gyro_bias + n.gyro_sigma * gauss3(&mut self.rng_imu);
            let accel = specific_force + self.accel_bias + n.accel_sigma * gauss3(&mut self.rng_imu);
            batch.imu = Some(ImuSample { t, gyro, accel });
            let sqrt_dt = (1.0 / n.imu_hz).sqrt();
            self.gyro_bias += n.gyro_bias_rw * sqrt_dt * gauss3(&mut self.rng_imu);
            self.accel_bias += n.accel_bias_rw * sqrt_dt * gauss3(&mut self.rng_imu);
        }
        if due(&mut self.next_gps, self.noise.gps_hz) {
            let n = &self.noise;
            let position =
                truth.position + self.gps_drift + n.gps_pos_sigma * gauss3(&mut self.rng_gps);
            let velocity = truth.velocity + n.gps_vel_sigma * gauss3(&mut self.rng_gps);
            batch.gps = Some(GpsSample { t, position, velocity });
            if n.gps_drift_rw > 0.0 {
                let sqrt_dt = (1.0 / n.gps_hz).sqrt();
                let mut walk = n.gps_drift_rw * sqrt_dt * gauss3(&mut self.rng_gps);
                walk.z = 0.0; // drift is a horizontal effect
                self.gps_drift += walk;
            }
        }
        if due(&mut self.next_baro, self.noise.baro_hz) {
            let n = &self.noise;
            let noise: f64 = n.baro_sigma * self.rng_baro.sample::<f64, _>(StandardNormal);
            batch.baro = Some(BaroSample {
                t,
                altitude: truth.position.z + self.baro_bias + noise,
            });
            let sqrt_dt = (1.0 / n.baro_hz).sqrt();
            self.baro_bias +=
                n.baro_bias_rw * sqrt_dt * self.rng_baro.sample::<f64, _>(StandardNormal);
        }
        if due(&mut self.next_mag, self.noise.mag_hz) {
            let field_body = body_from_world.transform_vector(&self.mag_field)
                + self.noise.mag_sigma * gauss3(&mut self.rng_mag);
            batch.mag = Some(MagSample { t, field_body });
        }
        batch
    }
}
