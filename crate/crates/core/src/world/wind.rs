//! Wind process: a random walk in direction with a mean-reverting speed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::Vec3;

/// Horizontal wind described by a heading angle and a speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindState {
    /// Direction the wind blows toward, rad from +x.
    pub direction: f64,
    /// Speed, m/s, never negative.
    pub speed: f64,
}

impl WindState {
    pub fn calm() -> Self {
        Self {
            direction: 0.0,
            speed: 0.0,
        }
    }

    /// World-frame air velocity.
    pub fn velocity(&self) -> Vec3 {
        Vec3::new(
            self.speed * self.direction.cos(),
            self.speed * self.direction.sin(),
            0.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindParams {
    /// Long-run mean speed, m/s. Zero gives still air.
    pub mean_speed: f64,
    /// Direction random walk intensity, rad per sqrt(s).
    pub sigma_direction: f64,
    /// Speed mean-reversion time constant, s.
    pub tau_speed: f64,
    /// Speed process noise intensity, m/s per sqrt(s).
    pub sigma_speed: f64,
}

impl Default for WindParams {
    fn default() -> Self {
        Self {
            mean_speed: 30.0 / 3.6,
            sigma_direction: 0.15,
            tau_speed: 10.0,
            sigma_speed: 0.6,
        }
    }
}

impl WindParams {
    pub fn still_air() -> Self {
        Self {
            mean_speed: 0.0,
            sigma_direction: 0.0,
            sigma_speed: 0.0,
            ..Self::default()
        }
    }

    /// Steady wind with no stochastic variation, for repeatable tests.
    pub fn steady(speed: f64, direction: f64) -> (Self, WindState) {
        let params = Self {
            mean_speed: speed,
            sigma_direction: 0.0,
            sigma_speed: 0.0,
            ..Self::default()
        };
        (params, WindState { direction, speed })
    }

    /// Draws the initial state at the process mean with a random heading.
    pub fn init(&self, rng: &mut impl Rng) -> WindState {
        WindState {
            direction: rng.gen_range(0.0..std::f64::consts::TAU),
            speed: self.mean_speed,
        }
    }
}

/// Advances the wind one step: the direction takes a Gaussian increment
/// scaled by sqrt(dt) and the speed relaxes toward the mean as an
/// Ornstein-Uhlenbeck process, floored at zero.
pub fn wind_step(wind: &WindState, params: &WindParams, dt: f64, rng: &mut impl Rng) -> WindState {
    debug_assert!(dt > 0.0);
    let sqrt_dt = dt.sqrt();
    let dir_noise: f64 = rng.sample(StandardNormal);
    let speed_noise: f64 = rng.sample(StandardNormal);
    let direction = wind.direction + params.sigma_direction * sqrt_dt * dir_noise;
    let speed = wind.speed
        + (params.mean_speed - wind.speed) / params.tau_speed * dt
        + params.sigma_speed * sqrt_dt * speed_noise;
    WindState {
        direction,
        speed: speed.max(0.0),
    }
}
