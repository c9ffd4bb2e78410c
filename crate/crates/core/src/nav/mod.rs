//! State estimation: a multi-sensor error-state Kalman filter over vehicle
//! pose plus the sensor-extrinsic nuisance states (IMU biases, GPS antenna
//! lever arm, magnetometer alignment, world field direction, pressure bias
//! and lever arm), and vision-based landing-pad re-localization.
//!
//! [`Navigator`] is the single-writer front end: it enforces per-stream
//! timestamp ordering, routes samples to the filter operations, and serves
//! read-only state snapshots to control and autonomy consumers.

mod filter;

pub use filter::{propagate, update_gps, update_magnetometer, update_pressure, NavCov, STATE_DIM};

use nalgebra::SVector;
use thiserror::Error;

use crate::padvision::{PadPoseEstimate, RlsParams};
use crate::world::{BaroSample, GpsSample, ImuSample, MagSample, SensorNoise};
use crate::{Quat, Vec3};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("{stream} sample at t = {t} precedes the last one at t = {last}")]
    OutOfOrder {
        stream: &'static str,
        t: f64,
        last: f64,
    },
    #[error("pad pose estimator has never initialized; run a search pattern")]
    PadNeverSeen,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Filter noise parameters. Sigmas are per-sample standard deviations for
/// the discrete measurement streams; bias random walks are intensities per
/// sqrt(second).
#[derive(Debug, Clone, PartialEq)]
pub struct NavParams {
    pub sigma_gyro: f64,
    pub sigma_accel: f64,
    pub sigma_gyro_bias_rw: f64,
    pub sigma_accel_bias_rw: f64,
    pub sigma_gps_xy: f64,
    pub sigma_gps_z: f64,
    pub sigma_gps_vel: f64,
    pub sigma_baro: f64,
    pub sigma_baro_bias_rw: f64,
    pub sigma_mag: f64,
    /// Chi-squared gate probability for innovation acceptance.
    pub gate_prob: f64,
}

impl Default for NavParams {
    fn default() -> Self {
        Self {
            sigma_gyro: 0.003,
            sigma_accel: 0.03,
            sigma_gyro_bias_rw: 1e-5,
            sigma_accel_bias_rw: 1e-4,
            sigma_gps_xy: 0.5,
            sigma_gps_z: 1.0,
            sigma_gps_vel: 0.1,
            sigma_baro: 0.3,
            sigma_baro_bias_rw: 0.0,
            sigma_mag: 2f64.to_radians().sin(),
            gate_prob: 0.999,
        }
    }
}

impl NavParams {
    /// Mirror the simulated sensor suite so the filter model matches the
    /// noise that actually drives the measurements.
    pub fn from_world_noise(noise: &SensorNoise) -> Self {
        Self {
            sigma_gyro: noise.gyro_sigma,
            sigma_accel: noise.accel_sigma,
            sigma_gyro_bias_rw: noise.gyro_bias_rw,
            sigma_accel_bias_rw: noise.accel_bias_rw,
            sigma_gps_xy: noise.gps_pos_sigma,
            sigma_gps_z: noise.gps_pos_sigma,
            sigma_gps_vel: noise.gps_vel_sigma,
            sigma_baro: noise.baro_sigma,
            sigma_baro_bias_rw: noise.baro_bias_rw,
            sigma_mag: noise.mag_sigma,
            gate_prob: 0.999,
        }
    }
}

/// Initial one-sigma uncertainties used to seed the covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NavInit {
    pub sigma_pos_xy: f64,
    pub sigma_pos_z: f64,
    pub sigma_vel: f64,
    pub sigma_att: f64,
    pub sigma_gyro_bias: f64,
    pub sigma_accel_bias: f64,
    pub sigma_gps_lever: f64,
    pub sigma_mag_align: f64,
    pub sigma_world_field: f64,
    pub sigma_baro_bias: f64,
    pub sigma_baro_lever: f64,
}

impl Default for NavInit {
    fn default() -> Self {
        Self {
            sigma_pos_xy: 0.3,
            sigma_pos_z: 0.5,
            sigma_vel: 0.1,
            sigma_att: 0.03,
            sigma_gyro_bias: 0.005,
            sigma_accel_bias: 0.05,
            sigma_gps_lever: 0.01,
            sigma_mag_align: 0.01,
            sigma_world_field: 0.01,
            sigma_baro_bias: 0.3,
            sigma_baro_lever: 0.01,
        }
    }
}

impl NavInit {
    /// Match the bias priors to the spread the sensor suite draws its
    /// initial biases from.
    pub fn from_world_noise(noise: &SensorNoise) -> Self {
        Self {
            sigma_gyro_bias: noise.gyro_bias_init.max(1e-6),
            sigma_accel_bias: noise.accel_bias_init.max(1e-6),
            sigma_baro_bias: noise.baro_bias_init.max(1e-6),
            ..Self::default()
        }
    }
}

/// Full estimator state: nominal values plus the error covariance over the
/// 28-dimensional error state.
#[derive(Debug, Clone)]
pub struct NavState {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Quat,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    /// GPS antenna position in the body frame.
    pub gps_lever: Vec3,
    /// Magnetometer mounting rotation relative to the body frame.
    pub mag_alignment: Quat,
    /// World magnetic field direction, unit norm.
    pub world_field: Vec3,
    /// Pressure altitude bias [m].
    pub baro_bias: f64,
    /// Pressure sensor position in the body frame.
    pub baro_lever: Vec3,
    pub covariance: NavCov,
    /// Bias-corrected body rates from the latest IMU sample, used for
    /// lever-arm velocity terms.
    pub last_gyro: Vec3,
    // Health counters.
    pub rejected_gps: u32,
    pub rejected_baro: u32,
    pub rejected_mag: u32,
    pub oversized_dt: u32,
    pub mag_degenerate: u32,
}

impl NavState {
    /// Build a state at `t` with a diagonal covariance from `init`.
    pub fn init(
        t: f64,
        position: Vec3,
        velocity: Vec3,
        attitude: Quat,
        world_field: Vec3,
        init: &NavInit,
    ) -> Self {
        let mut cov = NavCov::zeros();
        let mut set3 = |at: usize, sigma: f64| {
            for i in 0..3 {
                cov[(at + i, at + i)] = sigma * sigma;
            }
        };
        set3(filter::IV, init.sigma_vel);
        set3(filter::ITH, init.sigma_att);
        set3(filter::IBG, init.sigma_gyro_bias);
        set3(filter::IBA, init.sigma_accel_bias);
        set3(filter::IPG, init.sigma_gps_lever);
        set3(filter::ITM, init.sigma_mag_align);
        set3(filter::IMW, init.sigma_world_field);
        set3(filter::IPP, init.sigma_baro_lever);
        cov[(filter::IP, filter::IP)] = init.sigma_pos_xy.powi(2);
        cov[(filter::IP + 1, filter::IP + 1)] = init.sigma_pos_xy.powi(2);
        cov[(filter::IP + 2, filter::IP + 2)] = init.sigma_pos_z.powi(2);
        cov[(filter::IBP, filter::IBP)] = init.sigma_baro_bias.powi(2);
        Self {
            t,
            position,
            velocity,
            attitude,
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
            gps_lever: Vec3::zeros(),
            mag_alignment: Quat::identity(),
            world_field: if world_field.norm() > 1e-9 {
                world_field.normalize()
            } else {
                Vec3::x()
            },
            baro_bias: 0.0,
            baro_lever: Vec3::zeros(),
            covariance: cov,
            last_gyro: Vec3::zeros(),
            rejected_gps: 0,
            rejected_baro: 0,
            rejected_mag: 0,
            oversized_dt: 0,
            mag_degenerate: 0,
        }
    }

    /// Covariance diagonal, for telemetry.
    pub fn cov_diagonal(&self) -> SVector<f64, STATE_DIM> {
        self.covariance.diagonal()
    }

    /// Normalized estimation error squared of the position/velocity block
    /// against a known truth, for consistency checks.
    pub fn nees_pos_vel(&self, true_position: &Vec3, true_velocity: &Vec3) -> Option<f64> {
        let mut e = SVector::<f64, 6>::zeros();
        e.fixed_rows_mut::<3>(0)
            .copy_from(&(self.position - true_position));
        e.fixed_rows_mut::<3>(3)
            .copy_from(&(self.velocity - true_velocity));
        let block = self
            .covariance
            .fixed_view::<6, 6>(filter::IP, filter::IP)
            .into_owned();
        let inv = block.try_inverse()?;
        Some((e.transpose() * inv * e)[(0, 0)])
    }
}

/// One measurement routed through [`Navigator::ingest`].
#[derive(Debug, Clone)]
pub enum SensorSample {
    Imu(ImuSample),
    Gps(GpsSample),
    Pressure(BaroSample),
    Magnetometer(MagSample),
    /// Snapshot of the vision pad estimator after a bundle solve.
    PadVision { t: f64, estimate: PadPoseEstimate },
}

impl SensorSample {
    pub fn t(&self) -> f64 {
        match self {
            Self::Imu(s) => s.t,
            Self::Gps(s) => s.t,
            Self::Pressure(s) => s.t,
            Self::Magnetometer(s) => s.t,
            Self::PadVision { t, .. } => *t,
        }
    }

    fn stream(&self) -> &'static str {
        match self {
            Self::Imu(_) => "imu",
            Self::Gps(_) => "gps",
            Self::Pressure(_) => "pressure",
            Self::Magnetometer(_) => "magnetometer",
            Self::PadVision { .. } => "pad-vision",
        }
    }
}

/// World-frame landing reference produced by pad re-localization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingTarget {
    /// Pad center in the estimator's world frame.
    pub position: Vec3,
    /// Pad yaw in the world frame [rad].
    pub yaw: f64,
    /// True when the estimate has not been fed for over 2 s and the value
    /// is a hold of the last good one.
    pub stale: bool,
}

/// Seconds without pad measurements before a landing target is stale.
pub const PAD_STALE_AFTER: f64 = 2.0;

/// Express the filtered pad pose as the landing target in the estimator's
/// world frame, superseding any stored takeoff-home coordinates. An RLS
/// estimate that never initialized is an error: the caller must fall back
/// to a search pattern.
pub fn relocalize_pad(
    estimate: &PadPoseEstimate,
    nav: &NavState,
    rls: &RlsParams,
) -> Result<LandingTarget, NavError> {
    if estimate.samples < rls.k_min {
        return Err(NavError::PadNeverSeen);
    }
    if !(estimate.position.iter().all(|v| v.is_finite()) && estimate.yaw.is_finite()) {
        return Err(NavError::NonFinite("pad estimate"));
    }
    Ok(LandingTarget {
        position: estimate.position,
        yaw: estimate.yaw,
        stale: nav.t - estimate.last_update > PAD_STALE_AFTER,
    })
}

/// Single-writer estimator front end stepped by the simulation clock.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub state: NavState,
    pub params: NavParams,
    pub rls_params: RlsParams,
    last_imu: Option<f64>,
    last_gps: Option<f64>,
    last_baro: Option<f64>,
    last_mag: Option<f64>,
    last_pad: Option<f64>,
    pad: Option<PadPoseEstimate>,
}

impl Navigator {
    pub fn new(state: NavState, params: NavParams) -> Self {
        Self {
            state,
            params,
            rls_params: RlsParams::default(),
            last_imu: None,
            last_gps: None,
            last_baro: None,
            last_mag: None,
            last_pad: None,
            pad: None,
        }
    }

    /// Route one sample into the filter. Per-stream timestamps must be
    /// non-decreasing; violating samples are dropped with an error.
    pub fn ingest(&mut self, sample: &SensorSample) -> Result<(), NavError> {
        let t = sample.t();
        if !t.is_finite() {
            return Err(NavError::NonFinite("timestamp"));
        }
        let slot = match sample {
            SensorSample::Imu(_) => &mut self.last_imu,
            SensorSample::Gps(_) => &mut self.last_gps,
            SensorSample::Pressure(_) => &mut self.last_baro,
            SensorSample::Magnetometer(_) => &mut self.last_mag,
            SensorSample::PadVision { .. } => &mut self.last_pad,
        };
        if let Some(last) = *slot {
            if t < last {
                return Err(NavError::OutOfOrder {
                    stream: sample.stream(),
                    t,
                    last,
                });
            }
        }
        let prev = slot.replace(t);
        match sample {
            SensorSample::Imu(imu) => {
                if let Some(last) = prev {
                    self.state = propagate(&self.state, imu, t - last, &self.params);
                } else {
                    self.state.t = t;
                }
            }
            SensorSample::Gps(gps) => self.state = update_gps(&self.state, gps, &self.params),
            SensorSample::Pressure(baro) => {
                self.state = update_pressure(&self.state, baro, &self.params);
            }
            SensorSample::Magnetometer(mag) => {
                self.state = update_magnetometer(&self.state, mag, &self.params);
            }
            SensorSample::PadVision { estimate, .. } => {
                self.pad = Some(estimate.clone());
            }
        }
        Ok(())
    }

    /// Re-seed the pose, velocity and attitude uncertainty from `init` and
    /// zero the velocity estimate, keeping the learned bias and extrinsic
    /// states. The takeoff sequence requests this before spin-up: after a
    /// long motionless charge the covariance has collapsed far below what
    /// the upcoming flight can trust.
    pub fn reinit_on_pad(&mut self, init: &NavInit) {
        let s = &mut self.state;
        s.velocity = Vec3::zeros();
        // Cross terms between the re-seeded blocks and everything else no
        // longer describe a believed correlation; drop them.
        for i in filter::IP..filter::IP + 9 {
            for j in 0..STATE_DIM {
                s.covariance[(i, j)] = 0.0;
                s.covariance[(j, i)] = 0.0;
            }
        }
        s.covariance[(filter::IP, filter::IP)] = init.sigma_pos_xy.powi(2);
        s.covariance[(filter::IP + 1, filter::IP + 1)] = init.sigma_pos_xy.powi(2);
        s.covariance[(filter::IP + 2, filter::IP + 2)] = init.sigma_pos_z.powi(2);
        for i in 0..3 {
            s.covariance[(filter::IV + i, filter::IV + i)] = init.sigma_vel.powi(2);
            s.covariance[(filter::ITH + i, filter::ITH + i)] = init.sigma_att.powi(2);
        }
    }

    /// Latest vision pad estimate, if any solve ever reached the filter.
    pub fn pad_estimate(&self) -> Option<&PadPoseEstimate> {
        self.pad.as_ref()
    }

    /// Current landing target from pad re-localization.
    pub fn landing_target(&self) -> Result<LandingTarget, NavError> {
        let est = self.pad.as_ref().ok_or(NavError::PadNeverSeen)?;
        relocalize_pad(est, &self.state, &self.rls_params)
    }
}
