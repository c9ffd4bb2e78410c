//! Recursive least-squares smoothing of the raw pad pose stream.
//!
//! Each position axis carries an exponentially forgetting scalar RLS whose
//! per-sample weight is the smallest tracked axis variance divided by that
//! axis's own variance, so noisier axes (typically height at long range)
//! update more cautiously. Yaw is filtered on the circle through its
//! cosine/sine pair and reassembled as a pure yaw quaternion, because the
//! pad is assumed level.

use super::PadVisionError;
use crate::geom::{canonicalize, yaw_of, yaw_quat};
use crate::{Quat, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct RlsParams {
    /// Forgetting factor; 1.0 never forgets.
    pub lambda: f64,
    /// Samples required before the estimate counts as initialized.
    pub k_min: u32,
    /// Lower bound applied to variance estimates before weighting.
    pub variance_floor: f64,
}

impl Default for RlsParams {
    fn default() -> Self {
        Self {
            lambda: 0.995,
            k_min: 20,
            variance_floor: 1e-10,
        }
    }
}

/// Raw and filtered landing pad pose, plus the running per-axis variance
/// estimates the weighting is based on.
#[derive(Debug, Clone, PartialEq)]
pub struct PadPoseEstimate {
    /// Most recent raw bundle solve.
    pub raw_position: Vec3,
    pub raw_attitude: Quat,
    /// Filtered pad position.
    pub position: Vec3,
    /// Filtered pad yaw; the full filtered attitude is [`Self::yaw_quat`].
    pub yaw: f64,
    /// Measurement variance estimates for x, y, z [m^2] and yaw (circular
    /// variance, dimensionless).
    pub axis_variance: [f64; 4],
    pub samples: u32,
    /// Timestamp of the last accepted measurement.
    pub last_update: f64,
    info: [f64; 4],
    yaw_cs: (f64, f64),
    var_mean: [f64; 3],
    var_wsum: f64,
    yaw_var_cs: (f64, f64),
}

impl Default for PadPoseEstimate {
    fn default() -> Self {
        Self {
            raw_position: Vec3::zeros(),
            raw_attitude: Quat::identity(),
            position: Vec3::zeros(),
            yaw: 0.0,
            axis_variance: [0.0; 4],
            samples: 0,
            last_update: 0.0,
            info: [0.0; 4],
            yaw_cs: (0.0, 0.0),
            var_mean: [0.0; 3],
            var_wsum: 0.0,
            yaw_var_cs: (0.0, 0.0),
        }
    }
}

impl PadPoseEstimate {
    pub fn initialized(&self, params: &RlsParams) -> bool {
        self.samples >= params.k_min
    }

    /// Filtered attitude: zero roll and pitch by construction.
    pub fn yaw_quat(&self) -> Quat {
        yaw_quat(self.yaw)
    }
}

/// Fold one raw pad pose measurement into the estimate.
pub fn rls_update(
    est: &PadPoseEstimate,
    position: &Vec3,
    attitude: &Quat,
    t: f64,
    params: &RlsParams,
) -> Result<PadPoseEstimate, PadVisionError> {
    if !position.iter().all(|v| v.is_finite())
        || !attitude.coords.iter().all(|v| v.is_finite())
        || !t.is_finite()
    {
        return Err(PadVisionError::NonFiniteMeasurement);
    }
    let lambda = params.lambda;
    let mut e = est.clone();
    let yaw_m = yaw_of(attitude);
    let (sin_m, cos_m) = yaw_m.sin_cos();

    // Exponentially weighted variance tracking (weighted Welford update).
    let w_old = e.var_wsum;
    let w_new = lambda * w_old + 1.0;
    for axis in 0..3 {
        let m = position[axis];
        let delta = m - e.var_mean[axis];
        e.var_mean[axis] += delta / w_new;
        e.axis_variance[axis] =
            (lambda * e.axis_variance[axis] * w_old + delta * (m - e.var_mean[axis])) / w_new;
    }
    e.yaw_var_cs.0 += (cos_m - e.yaw_var_cs.0) / w_new;
    e.yaw_var_cs.1 += (sin_m - e.yaw_var_cs.1) / w_new;
    e.axis_variance[3] =
        (1.0 - (e.yaw_var_cs.0.powi(2) + e.yaw_var_cs.1.powi(2)).sqrt()).max(0.0);
    e.var_wsum = w_new;

    // Per-axis weights relative to the best position axis.
    let floored = [
        e.axis_variance[0].max(params.variance_floor),
        e.axis_variance[1].max(params.variance_floor),
        e.axis_variance[2].max(params.variance_floor),
    ];
    let reference = floored[0].min(floored[1]).min(floored[2]);
    for axis in 0..3 {
        let w = reference / floored[axis];
        let info = lambda * e.info[axis] + w;
        e.position[axis] += (w / info) * (position[axis] - e.position[axis]);
        e.info[axis] = info;
    }

    // Yaw on the circle, constant weight.
    let info_yaw = lambda * e.info[3] + 1.0;
    e.yaw_cs.0 += (cos_m - e.yaw_cs.0) / info_yaw;
    e.yaw_cs.1 += (sin_m - e.yaw_cs.1) / info_yaw;
    e.info[3] = info_yaw;
    if e.yaw_cs.0.hypot(e.yaw_cs.1) > 1e-12 {
        e.yaw = e.yaw_cs.1.atan2(e.yaw_cs.0);
    }

    e.raw_position = *position;
    e.raw_attitude = canonicalize(*attitude);
    e.samples = est.samples.saturating_add(1);
    e.last_update = t;
    Ok(e)
}
