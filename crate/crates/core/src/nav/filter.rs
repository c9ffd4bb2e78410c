//! Error-state filter operations: strapdown propagation and the per-sensor
//! innovation updates, all over the 28-dimensional error state laid out in
//! [`super::NavState`].
//!
//! Attitude errors are local (body-frame, right-multiplicative): the true
//! rotation is modeled as `q_est * exp(delta_theta)`, and every Jacobian
//! below follows that convention.

use nalgebra::{SMatrix, SVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{NavParams, NavState};
use crate::geom::canonicalize;
use crate::world::{BaroSample, GpsSample, ImuSample, MagSample};
use crate::{Mat3, Quat, Vec3, GRAVITY};

/// Error-state dimension.
pub const STATE_DIM: usize = 28;

// Block offsets inside the error state.
pub(crate) const IP: usize = 0; // position
pub(crate) const IV: usize = 3; // velocity
pub(crate) const ITH: usize = 6; // attitude
pub(crate) const IBG: usize = 9; // gyro bias
pub(crate) const IBA: usize = 12; // accel bias
pub(crate) const IPG: usize = 15; // GPS antenna lever arm
pub(crate) const ITM: usize = 18; // magnetometer alignment
pub(crate) const IMW: usize = 21; // world magnetic field direction
pub(crate) const IBP: usize = 24; // pressure altitude bias (scalar)
pub(crate) const IPP: usize = 25; // pressure-sensor lever arm

pub type NavCov = SMatrix<f64, STATE_DIM, STATE_DIM>;

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn symmetrize(p: &mut NavCov) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Strapdown propagation with one IMU sample held over `dt`. A `dt` beyond
/// 0.1 s is flagged and split into equal substeps; non-positive `dt` is a
/// no-op.
pub fn propagate(state: &NavState, imu: &ImuSample, dt: f64, params: &NavParams) -> NavState {
    let mut out = state.clone();
    if dt <= 0.0 {
        return out;
    }
    let steps = (dt / 0.1).ceil().max(1.0) as usize;
    if steps > 1 {
        out.oversized_dt += 1;
    }
    let sub = dt / steps as f64;
    for _ in 0..steps {
        propagate_one(&mut out, imu, sub, params);
    }
    out.t = state.t + dt;
    out
}

fn propagate_one(s: &mut NavState, imu: &ImuSample, dt: f64, params: &NavParams) {
    let gyro = imu.gyro - s.gyro_bias;
    let f_b = imu.accel - s.accel_bias;
    let r = s.attitude.to_rotation_matrix().into_inner();

    // First-order error transition, evaluated at the pre-update mean.
    let mut phi = NavCov::identity();
    phi.fixed_view_mut::<3, 3>(IP, IV)
        .copy_from(&(Mat3::identity() * dt));
    phi.fixed_view_mut::<3, 3>(IV, ITH)
        .copy_from(&(-(r * skew(&f_b)) * dt));
    phi.fixed_view_mut::<3, 3>(IV, IBA).copy_from(&(-r * dt));
    phi.fixed_view_mut::<3, 3>(ITH, ITH)
        .copy_from(&(Mat3::identity() - skew(&gyro) * dt));
    phi.fixed_view_mut::<3, 3>(ITH, IBG)
        .copy_from(&(-Mat3::identity() * dt));

    let qv = (params.sigma_accel * dt).powi(2);
    let qth = (params.sigma_gyro * dt).powi(2);
    let qbg = params.sigma_gyro_bias_rw.powi(2) * dt;
    let qba = params.sigma_accel_bias_rw.powi(2) * dt;
    let mut q_d = NavCov::zeros();
    for i in 0..3 {
        q_d[(IV + i, IV + i)] = qv;
        q_d[(ITH + i, ITH + i)] = qth;
        q_d[(IBG + i, IBG + i)] = qbg;
        q_d[(IBA + i, IBA + i)] = qba;
    }
    q_d[(IBP, IBP)] = params.sigma_baro_bias_rw.powi(2) * dt;

    s.covariance = phi * s.covariance * phi.transpose() + q_d;
    symmetrize(&mut s.covariance);

    let a_w = r * f_b + Vec3::new(0.0, 0.0, -GRAVITY);
    s.position += s.velocity * dt + a_w * (0.5 * dt * dt);
    s.velocity += a_w * dt;
    s.attitude = canonicalize(s.attitude * Quat::from_scaled_axis(gyro * dt));
    s.last_gyro = gyro;
}

enum UpdateOutcome {
    Applied,
    Rejected,
}

/// Joseph-form innovation update with a chi-squared Mahalanobis gate.
fn kalman_update<const M: usize>(
    s: &mut NavState,
    h: &SMatrix<f64, M, STATE_DIM>,
    innovation: &SVector<f64, M>,
    r_diag: &SVector<f64, M>,
    gate_prob: f64,
) -> UpdateOutcome {
    let r = SMatrix::<f64, M, M>::from_diagonal(r_diag);
    let s_mat = h * s.covariance * h.transpose() + r;
    let Some(s_inv) = s_mat.try_inverse() else {
        return UpdateOutcome::Rejected;
    };
    let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    let gate = ChiSquared::new(M as f64)
        .expect("valid dof")
        .inverse_cdf(gate_prob.clamp(0.5, 1.0 - 1e-12));
    if d2 > gate {
        return UpdateOutcome::Rejected;
    }
    let k = s.covariance * h.transpose() * s_inv;
    let dx: SVector<f64, STATE_DIM> = k * innovation;
    let i_kh = NavCov::identity() - k * h;
    s.covariance = i_kh * s.covariance * i_kh.transpose() + k * r * k.transpose();
    symmetrize(&mut s.covariance);
    inject(s, &dx);
    UpdateOutcome::Applied
}

/// Fold an error-state correction into the nominal state.
fn inject(s: &mut NavState, dx: &SVector<f64, STATE_DIM>) {
    s.position += dx.fixed_rows::<3>(IP).into_owned();
    s.velocity += dx.fixed_rows::<3>(IV).into_owned();
    s.attitude = canonicalize(
        s.attitude * Quat::from_scaled_axis(dx.fixed_rows::<3>(ITH).into_owned()),
    );
    s.gyro_bias += dx.fixed_rows::<3>(IBG).into_owned();
    s.accel_bias += dx.fixed_rows::<3>(IBA).into_owned();
    s.gps_lever += dx.fixed_rows::<3>(IPG).into_owned();
    s.mag_alignment = canonicalize(
        s.mag_alignment * Quat::from_scaled_axis(dx.fixed_rows::<3>(ITM).into_owned()),
    );
    let mw = s.world_field + dx.fixed_rows::<3>(IMW).into_owned();
    if mw.norm() > 1e-9 {
        s.world_field = mw.normalize();
    }
    s.baro_bias += dx[IBP];
    s.baro_lever += dx.fixed_rows::<3>(IPP).into_owned();
}

/// Position/velocity update with antenna lever-arm compensation.
pub fn update_gps(state: &NavState, gps: &GpsSample, params: &NavParams) -> NavState {
    let mut s = state.clone();
    let r = s.attitude.to_rotation_matrix().into_inner();
    let pg = s.gps_lever;
    let w = s.last_gyro;
    let pred_p = s.position + r * pg;
    let pred_v = s.velocity + r * w.cross(&pg);

    let mut innovation = SVector::<f64, 6>::zeros();
    innovation
        .fixed_rows_mut::<3>(0)
        .copy_from(&(gps.position - pred_p));
    innovation
        .fixed_rows_mut::<3>(3)
        .copy_from(&(gps.velocity - pred_v));

    let mut h = SMatrix::<f64, 6, STATE_DIM>::zeros();
    h.fixed_view_mut::<3, 3>(0, IP).copy_from(&Mat3::identity());
    h.fixed_view_mut::<3, 3>(0, ITH).copy_from(&(-(r * skew(&pg))));
    h.fixed_view_mut::<3, 3>(0, IPG).copy_from(&r);
    h.fixed_view_mut::<3, 3>(3, IV).copy_from(&Mat3::identity());
    h.fixed_view_mut::<3, 3>(3, ITH)
        .copy_from(&(-(r * skew(&w.cross(&pg)))));
    h.fixed_view_mut::<3, 3>(3, IPG).copy_from(&(r * skew(&w)));

    let r_diag = SVector::<f64, 6>::from_column_slice(&[
        params.sigma_gps_xy.powi(2),
        params.sigma_gps_xy.powi(2),
        params.sigma_gps_z.powi(2),
        params.sigma_gps_vel.powi(2),
        params.sigma_gps_vel.powi(2),
        params.sigma_gps_vel.powi(2),
    ]);
    if let UpdateOutcome::Rejected =
        kalman_update(&mut s, &h, &innovation, &r_diag, params.gate_prob)
    {
        s.rejected_gps += 1;
    }
    s
}

/// Scalar pressure-altitude update: measurement is height plus a slowly
/// varying bias, lever-arm corrected. The bias is observable only jointly
/// with an absolute height reference.
pub fn update_pressure(state: &NavState, baro: &BaroSample, params: &NavParams) -> NavState {
    let mut s = state.clone();
    let r = s.attitude.to_rotation_matrix().into_inner();
    let pp = s.baro_lever;
    let pred = s.position.z + (r * pp).z + s.baro_bias;
    let innovation = SVector::<f64, 1>::new(baro.altitude - pred);

    let mut h = SMatrix::<f64, 1, STATE_DIM>::zeros();
    h[(0, IP + 2)] = 1.0;
    let dth = -(r * skew(&pp));
    for j in 0..3 {
        h[(0, ITH + j)] = dth[(2, j)];
        h[(0, IPP + j)] = r[(2, j)];
    }
    h[(0, IBP)] = 1.0;

    let r_diag = SVector::<f64, 1>::new(params.sigma_baro.powi(2));
    if let UpdateOutcome::Rejected =
        kalman_update(&mut s, &h, &innovation, &r_diag, params.gate_prob)
    {
        s.rejected_baro += 1;
    }
    s
}

/// World magnetic field direction observed in the body frame through the
/// magnetometer alignment. Corrects yaw; a near-vertical field direction
/// carries no yaw information, so those updates are flagged and skipped.
pub fn update_magnetometer(state: &NavState, mag: &MagSample, params: &NavParams) -> NavState {
    let mut s = state.clone();
    if mag.field_body.norm() < 1e-9 {
        s.rejected_mag += 1;
        return s;
    }
    if s.world_field.fixed_rows::<2>(0).norm() < 0.05 {
        s.mag_degenerate += 1;
        return s;
    }
    let r = s.attitude.to_rotation_matrix().into_inner();
    let rm = s.mag_alignment.to_rotation_matrix().into_inner();
    let u = r.transpose() * s.world_field;
    let pred = rm.transpose() * u;
    let innovation: SVector<f64, 3> = mag.field_body - pred;

    let mut h = SMatrix::<f64, 3, STATE_DIM>::zeros();
    h.fixed_view_mut::<3, 3>(0, ITH)
        .copy_from(&(rm.transpose() * skew(&u)));
    h.fixed_view_mut::<3, 3>(0, ITM).copy_from(&skew(&pred));
    h.fixed_view_mut::<3, 3>(0, IMW)
        .copy_from(&(rm.transpose() * r.transpose()));

    let r_diag = SVector::<f64, 3>::repeat(params.sigma_mag.powi(2));
    if let UpdateOutcome::Rejected =
        kalman_update(&mut s, &h, &innovation, &r_diag, params.gate_prob)
    {
        s.rejected_mag += 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{yaw_of, yaw_quat};
    use crate::nav::NavInit;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rest_imu(t: f64) -> ImuSample {
        ImuSample {
            t,
            gyro: Vec3::zeros(),
            accel: Vec3::new(0.0, 0.0, GRAVITY),
        }
    }

    fn exact_state() -> NavState {
        let mut s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            Quat::identity(),
            Vec3::new(0.7, 0.0, -0.7141).normalize(),
            &NavInit::default(),
        );
        s.covariance = NavCov::zeros();
        s
    }

    #[test]
    fn stationary_perfect_imu_is_an_equilibrium() {
        let params = NavParams::default();
        let mut s = exact_state();
        let dt = 0.005;
        for k in 1..=2000 {
            s = propagate(&s, &rest_imu(k as f64 * dt), dt, &params);
        }
        assert!(s.position.norm() < 1e-9, "drifted {:.2e}", s.position.norm());
        assert!(s.velocity.norm() < 1e-9);
        assert!(s.attitude.angle_to(&Quat::identity()) < 1e-9);
        assert!((s.t - 10.0).abs() < 1e-9);
    }

    #[test]
    fn constant_acceleration_integrates_exactly() {
        let params = NavParams::default();
        let mut s = exact_state();
        let dt = 0.005;
        let imu = |t: f64| ImuSample {
            t,
            gyro: Vec3::zeros(),
            accel: Vec3::new(1.0, 0.0, GRAVITY),
        };
        for k in 1..=400 {
            s = propagate(&s, &imu(k as f64 * dt), dt, &params);
        }
        assert!((s.velocity - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-9);
        assert!((s.position - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn z_axis_covariance_matches_a_scalar_filter() {
        // With gyro and bias noise off and all other blocks zeroed, the
        // (z position, z velocity) block must reproduce a hand-coded 1D
        // constant-velocity Kalman propagation exactly.
        let params = NavParams {
            sigma_gyro: 0.0,
            sigma_gyro_bias_rw: 0.0,
            sigma_accel_bias_rw: 0.0,
            sigma_baro_bias_rw: 0.0,
            ..NavParams::default()
        };
        let mut s = exact_state();
        let (p0, v0) = (0.25, 0.04);
        s.covariance[(IP + 2, IP + 2)] = p0;
        s.covariance[(IV + 2, IV + 2)] = v0;

        let dt = 0.005;
        let mut oracle = nalgebra::Matrix2::new(p0, 0.0, 0.0, v0);
        let f = nalgebra::Matrix2::new(1.0, dt, 0.0, 1.0);
        let q = nalgebra::Matrix2::new(0.0, 0.0, 0.0, (params.sigma_accel * dt).powi(2));
        for k in 1..=100 {
            s = propagate(&s, &rest_imu(k as f64 * dt), dt, &params);
            oracle = f * oracle * f.transpose() + q;
        }
        let block = nalgebra::Matrix2::new(
            s.covariance[(IP + 2, IP + 2)],
            s.covariance[(IP + 2, IV + 2)],
            s.covariance[(IV + 2, IP + 2)],
            s.covariance[(IV + 2, IV + 2)],
        );
        assert!(
            (block - oracle).norm() < 1e-12,
            "block {block} oracle {oracle}"
        );
    }

    #[test]
    fn oversized_dt_is_flagged_and_split() {
        let params = NavParams::default();
        let s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            Quat::identity(),
            Vec3::x(),
            &NavInit::default(),
        );
        let big = propagate(&s, &rest_imu(0.5), 0.5, &params);
        assert_eq!(big.oversized_dt, 1);
        assert!((big.t - 0.5).abs() < 1e-12);
        // Equivalent to five substeps of 0.1 s.
        let mut split = s.clone();
        for _ in 0..5 {
            split = propagate(&split, &rest_imu(0.5), 0.1, &params);
        }
        assert!((big.position - split.position).norm() < 1e-12);
        assert!((big.covariance - split.covariance).norm() < 1e-12);
    }

    #[test]
    fn zero_innovation_gps_update_leaves_the_mean_alone() {
        let params = NavParams::default();
        let s = NavState::init(
            0.0,
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(0.1, -0.2, 0.0),
            yaw_quat(0.8),
            Vec3::x(),
            &NavInit::default(),
        );
        let gps = GpsSample {
            t: 0.0,
            position: s.position,
            velocity: s.velocity,
        };
        let after = update_gps(&s, &gps, &params);
        assert!((after.position - s.position).norm() < 1e-12);
        assert!((after.velocity - s.velocity).norm() < 1e-12);
        assert!(after.attitude.angle_to(&s.attitude) < 1e-12);
        // Covariance still shrinks in the measured subspace.
        assert!(after.covariance[(IP, IP)] < s.covariance[(IP, IP)]);
    }

    #[test]
    fn repeated_gps_fixes_shrink_static_position_error() {
        let params = NavParams::default();
        let mut rng = stream(21, "nav-gps");
        let mut errors = Vec::new();
        for _ in 0..40 {
            let offset = Vec3::new(
                0.5 * rng.sample::<f64, _>(StandardNormal),
                0.5 * rng.sample::<f64, _>(StandardNormal),
                0.5 * rng.sample::<f64, _>(StandardNormal),
            );
            let mut s = NavState::init(
                0.0,
                offset,
                Vec3::zeros(),
                Quat::identity(),
                Vec3::x(),
                &NavInit {
                    sigma_pos_xy: 0.5,
                    sigma_pos_z: 0.5,
                    ..NavInit::default()
                },
            );
            for _ in 0..100 {
                let gps = GpsSample {
                    t: 0.0,
                    position: Vec3::new(
                        params.sigma_gps_xy * rng.sample::<f64, _>(StandardNormal),
                        params.sigma_gps_xy * rng.sample::<f64, _>(StandardNormal),
                        params.sigma_gps_z * rng.sample::<f64, _>(StandardNormal),
                    ),
                    velocity: Vec3::new(
                        params.sigma_gps_vel * rng.sample::<f64, _>(StandardNormal),
                        params.sigma_gps_vel * rng.sample::<f64, _>(StandardNormal),
                        params.sigma_gps_vel * rng.sample::<f64, _>(StandardNormal),
                    ),
                };
                s = update_gps(&s, &gps, &params);
            }
            errors.push(s.position.norm());
        }
        let rms =
            (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
        assert!(rms < 0.1 * 3f64.sqrt(), "per-axis rms {rms:.3}");
    }

    #[test]
    fn far_fix_with_tight_covariance_is_gated_out() {
        let params = NavParams::default();
        let mut s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            Quat::identity(),
            Vec3::x(),
            &NavInit::default(),
        );
        // Tighten position knowledge, then offer a wild fix.
        for i in 0..6 {
            s.covariance[(i, i)] = 1e-4;
        }
        let gps = GpsSample {
            t: 0.0,
            position: Vec3::new(50.0, 0.0, 0.0),
            velocity: Vec3::zeros(),
        };
        let after = update_gps(&s, &gps, &params);
        assert_eq!(after.rejected_gps, 1);
        assert!((after.position - s.position).norm() < 1e-12);
        assert!((after.covariance - s.covariance).norm() < 1e-12);
    }

    #[test]
    fn pressure_bias_converges_jointly_with_gps() {
        // Truth: static at z = 0 with a 1 m pressure bias. GPS plus
        // pressure make the bias observable.
        let params = NavParams::default();
        let mut s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            Quat::identity(),
            Vec3::new(0.7, 0.0, -0.7141).normalize(),
            &NavInit {
                sigma_baro_bias: 1.0,
                ..NavInit::default()
            },
        );
        let dt = 0.005;
        for k in 1..=12000 {
            let t = k as f64 * dt;
            s = propagate(&s, &rest_imu(t), dt, &params);
            if k % 40 == 0 {
                let gps = GpsSample {
                    t,
                    position: Vec3::zeros(),
                    velocity: Vec3::zeros(),
                };
                s = update_gps(&s, &gps, &params);
            }
            if k % 10 == 0 {
                let baro = BaroSample { t, altitude: 1.0 };
                s = update_pressure(&s, &baro, &params);
            }
        }
        assert!(
            (s.baro_bias - 1.0).abs() < 0.1,
            "bias estimate {:.3}",
            s.baro_bias
        );
        assert!(s.position.z.abs() < 0.1);
    }

    #[test]
    fn pressure_only_keeps_bias_variance_at_its_floor() {
        // Pressure measures z + bias, so the bias is identifiable only up
        // to the prior split of that sum. Even with the sum known exactly,
        // var(bias) cannot drop below the harmonic mean of the two priors.
        let params = NavParams::default();
        let init = NavInit::default();
        let mut s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            Quat::identity(),
            Vec3::x(),
            &init,
        );
        let vb = init.sigma_baro_bias.powi(2);
        let vz = init.sigma_pos_z.powi(2);
        let floor = vb * vz / (vb + vz);
        let dt = 0.005;
        for k in 1..=6000 {
            let t = k as f64 * dt;
            s = propagate(&s, &rest_imu(t), dt, &params);
            if k % 10 == 0 {
                s = update_pressure(&s, &BaroSample { t, altitude: 0.0 }, &params);
            }
        }
        let bias_var_end = s.covariance[(IBP, IBP)];
        assert!(
            bias_var_end > floor - 1e-9,
            "beat the information bound: {bias_var_end:.4} < {floor:.4}"
        );
        assert!(
            bias_var_end < floor + 0.005,
            "never converged to the bound: {bias_var_end:.4} vs {floor:.4}"
        );
        // Height itself stays bounded by the measurement.
        assert!(s.covariance[(IP + 2, IP + 2)] < 0.3);
    }

    #[test]
    fn zero_innovation_magnetometer_update_is_identity_on_the_mean() {
        let params = NavParams::default();
        let s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            yaw_quat(0.3),
            Vec3::new(0.7, 0.0, -0.7141).normalize(),
            &NavInit::default(),
        );
        let r = s.attitude.to_rotation_matrix().into_inner();
        let mag = MagSample {
            t: 0.0,
            field_body: r.transpose() * s.world_field,
        };
        let after = update_magnetometer(&s, &mag, &params);
        assert!(after.attitude.angle_to(&s.attitude) < 1e-12);
        assert!((after.position - s.position).norm() < 1e-12);
    }

    #[test]
    fn magnetometer_removes_attitude_error_transverse_to_the_field() {
        // A single reference direction cannot observe rotation about that
        // direction. With a dipping field, repeated updates must drive the
        // attitude error to exactly the projection of the initial error
        // onto the field axis; gravity handles the rest elsewhere.
        let params = NavParams::default();
        let field = Vec3::new(0.7, 0.0, -0.7141).normalize();
        // Estimator believes yaw = 10 degrees; truth is identity. The
        // attitude prior must admit an error that size, or the filter
        // rightly refuses to move.
        let yaw0 = 10f64.to_radians();
        let mut s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            yaw_quat(yaw0),
            field,
            &NavInit {
                sigma_att: 0.2,
                ..NavInit::default()
            },
        );
        let mag = MagSample {
            t: 0.0,
            field_body: field,
        };
        for _ in 0..50 {
            s = update_magnetometer(&s, &mag, &params);
        }
        assert_eq!(s.rejected_mag, 0);
        assert_eq!(s.mag_degenerate, 0);
        // Error rotation taking the estimate to the truth, body frame.
        let err = canonicalize(s.attitude.inverse());
        let expected = -yaw0 * field.z * field;
        assert!(
            (err.scaled_axis() - expected).norm() < 0.01,
            "residual {:?} vs projection {:?}",
            err.scaled_axis(),
            expected
        );
        // The prediction itself is reconciled with the measurement.
        let r = s.attitude.to_rotation_matrix().into_inner();
        let rm = s.mag_alignment.to_rotation_matrix().into_inner();
        let residual = (field - rm.transpose() * (r.transpose() * s.world_field)).norm();
        assert!(residual < 1e-3, "innovation residual {residual:.2e}");
    }

    #[test]
    fn horizontal_field_makes_a_yaw_error_fully_observable() {
        // Here the unobservable axis (the field itself) is orthogonal to
        // the yaw error, so the correction must be complete: yaw converges
        // without inventing any tilt.
        let params = NavParams::default();
        let field = Vec3::x();
        let mut s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            yaw_quat(10f64.to_radians()),
            field,
            &NavInit {
                sigma_att: 0.2,
                ..NavInit::default()
            },
        );
        let mag = MagSample {
            t: 0.0,
            field_body: field,
        };
        for _ in 0..50 {
            s = update_magnetometer(&s, &mag, &params);
        }
        assert!(
            yaw_of(&s.attitude).abs() < 0.5f64.to_radians(),
            "yaw {:.2} deg",
            yaw_of(&s.attitude).to_degrees()
        );
        let tilt = (s.attitude.to_rotation_matrix().into_inner().column(2) - Vec3::z()).norm();
        assert!(tilt < 0.01, "tilt {tilt:.4}");
    }

    #[test]
    fn opposite_yaw_innovation_is_twice_the_horizontal_field() {
        let field = Vec3::new(0.7, 0.0, -0.7141).normalize();
        let s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            yaw_quat(std::f64::consts::PI),
            field,
            &NavInit::default(),
        );
        // Truth attitude is identity, so the body-frame measurement is the
        // field itself.
        let meas = field;
        let r = s.attitude.to_rotation_matrix().into_inner();
        let rm = s.mag_alignment.to_rotation_matrix().into_inner();
        let innovation = meas - rm.transpose() * (r.transpose() * s.world_field);
        let horizontal = field.fixed_rows::<2>(0).norm();
        assert!(
            (innovation.norm() - 2.0 * horizontal).abs() < 1e-9,
            "innovation {:.6} vs {:.6}",
            innovation.norm(),
            2.0 * horizontal
        );
    }

    #[test]
    fn near_vertical_field_is_flagged_and_skipped() {
        let params = NavParams::default();
        let s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            Quat::identity(),
            Vec3::z(),
            &NavInit::default(),
        );
        let after = update_magnetometer(
            &s,
            &MagSample {
                t: 0.0,
                field_body: Vec3::z(),
            },
            &params,
        );
        assert_eq!(after.mag_degenerate, 1);
        assert!((after.covariance - s.covariance).norm() < 1e-12);
    }

    #[test]
    fn simultaneous_linear_updates_commute() {
        let params = NavParams::default();
        let s = NavState::init(
            0.0,
            Vec3::new(0.3, -0.2, 1.0),
            Vec3::new(0.05, 0.0, -0.01),
            Quat::identity(),
            Vec3::x(),
            &NavInit::default(),
        );
        let gps = GpsSample {
            t: 1.0,
            position: Vec3::new(0.5, -0.1, 1.2),
            velocity: Vec3::new(0.0, 0.02, 0.0),
        };
        let baro = BaroSample {
            t: 1.0,
            altitude: 0.8,
        };
        let ab = update_pressure(&update_gps(&s, &gps, &params), &baro, &params);
        let ba = update_gps(&update_pressure(&s, &baro, &params), &gps, &params);
        assert!((ab.position - ba.position).norm() < 1e-9);
        assert!((ab.velocity - ba.velocity).norm() < 1e-9);
        assert!((ab.baro_bias - ba.baro_bias).abs() < 1e-9);
        assert!(ab.attitude.angle_to(&ba.attitude) < 1e-9);
    }

    #[test]
    fn covariance_stays_symmetric_psd_under_random_operation_mix() {
        let params = NavParams::default();
        let mut rng = stream(22, "nav-psd");
        let mut s = NavState::init(
            0.0,
            Vec3::zeros(),
            Vec3::zeros(),
            Quat::identity(),
            Vec3::new(0.7, 0.0, -0.7141).normalize(),
            &NavInit::default(),
        );
        let mut t = 0.0;
        for k in 0..400 {
            t += 0.005;
            let imu = ImuSample {
                t,
                gyro: Vec3::new(
                    0.1 * rng.sample::<f64, _>(StandardNormal),
                    0.1 * rng.sample::<f64, _>(StandardNormal),
                    0.1 * rng.sample::<f64, _>(StandardNormal),
                ),
                accel: Vec3::new(0.0, 0.0, GRAVITY)
                    + Vec3::new(
                        0.3 * rng.sample::<f64, _>(StandardNormal),
                        0.3 * rng.sample::<f64, _>(StandardNormal),
                        0.3 * rng.sample::<f64, _>(StandardNormal),
                    ),
            };
            s = propagate(&s, &imu, 0.005, &params);
            match k % 4 {
                0 => {
                    s = update_gps(
                        &s,
                        &GpsSample {
                            t,
                            position: s.position
                                + Vec3::new(
                                    0.5 * rng.sample::<f64, _>(StandardNormal),
                                    0.5 * rng.sample::<f64, _>(StandardNormal),
                                    0.5 * rng.sample::<f64, _>(StandardNormal),
                                ),
                            velocity: s.velocity,
                        },
                        &params,
                    );
                }
                1 => {
                    s = update_pressure(
                        &s,
                        &BaroSample {
                            t,
                            altitude: s.position.z
                                + 0.3 * rng.sample::<f64, _>(StandardNormal),
                        },
                        &params,
                    );
                }
                2 => {
                    let r = s.attitude.to_rotation_matrix().into_inner();
                    s = update_magnetometer(
                        &s,
                        &MagSample {
                            t,
                            field_body: r.transpose() * s.world_field
                                + Vec3::new(
                                    0.01 * rng.sample::<f64, _>(StandardNormal),
                                    0.01 * rng.sample::<f64, _>(StandardNormal),
                                    0.01 * rng.sample::<f64, _>(StandardNormal),
                                ),
                        },
                        &params,
                    );
                }
                _ => {}
            }
            if k % 50 == 0 || k == 399 {
                let sym = (s.covariance - s.covariance.transpose()).norm();
                assert!(sym < 1e-12, "asymmetry {sym:.2e} at step {k}");
                let eig = s.covariance.symmetric_eigen();
                let min = eig.eigenvalues.min();
                assert!(min > -1e-12, "min eigenvalue {min:.2e} at step {k}");
            }
        }
    }
}
