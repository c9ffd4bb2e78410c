//! Cascaded flight controller.
//!
//! Three loops run at fixed rates on the simulation clock: a 2-DOF PID
//! translation loop (100 Hz) producing a desired acceleration, a reduced
//! attitude loop (200 Hz) turning that into body rate and collective thrust
//! commands, and a body rate loop (200 Hz) allocating motor thrusts. The
//! attitude loop prioritizes the thrust axis over heading, so yaw authority
//! is the first thing sacrificed when motors saturate.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::geom::{canonicalize, yaw_quat};
use crate::traj::{flat_to_state, FlatOutput, TrajError};
use crate::vehicle::VehicleParams;
use crate::{Quat, Vec3, GRAVITY};

/// Descent speed the open-loop emergency controller aims for, m/s.
pub const EMERGENCY_DESCENT_SPEED: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CtrlError {
    /// Demanded specific force vanished; no thrust direction exists.
    #[error("thrust direction undefined (demanded specific force {0:.3e} m/s^2)")]
    ThrustSingularity(f64),
    #[error("invalid controller gains: {0}")]
    InvalidGains(String),
}

/// Gains and loop rates for the full cascade.
///
/// Defaults place the closed-loop bandwidths near 1.9 rad/s (translation),
/// 8 rad/s (tilt), 7 rad/s (yaw) and 40 rad/s (body rate) on the default
/// vehicle; `validate` checks those bands analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    /// Reference prefilter time constant, s. Zero disables the filter.
    pub prefilter_tau: f64,
    /// Cap on the integral term's acceleration contribution, m/s^2.
    pub integrator_limit: f64,
    /// Thrust axis cone half-angle, rad.
    pub max_tilt: f64,
    pub k_tilt: f64,
    pub k_yaw: f64,
    /// Body rate proportional gain per axis, 1/s.
    #[serde(with = "crate::geom::serde_vec3")]
    pub k_rate: Vec3,
    pub translation_hz: f64,
    pub attitude_hz: f64,
    pub rate_hz: f64,
    pub guidance_hz: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            kp: 2.25,
            kd: 2.7,
            ki: 1.0,
            prefilter_tau: 0.6,
            integrator_limit: 3.0,
            max_tilt: 20f64.to_radians(),
            k_tilt: 7.0,
            k_yaw: 6.0,
            k_rate: Vec3::new(40.0, 40.0, 40.0),
            translation_hz: 100.0,
            attitude_hz: 200.0,
            rate_hz: 200.0,
            guidance_hz: 20.0,
        }
    }
}

impl ControlGains {
    /// Checks positivity and that the analytic closed-loop bandwidth
    /// estimates sit inside the design bands: translation within
    /// [1, 2] rad/s, attitude within [5, 10] rad/s, body rate within
    /// [30, 50] rad/s on the given vehicle.
    pub fn validate(&self, vehicle: &VehicleParams) -> Result<(), CtrlError> {
        let err = |m: String| Err(CtrlError::InvalidGains(m));
        for (name, v) in [
            ("kp", self.kp),
            ("kd", self.kd),
            ("k_tilt", self.k_tilt),
            ("k_yaw", self.k_yaw),
            ("translation_hz", self.translation_hz),
            ("attitude_hz", self.attitude_hz),
            ("rate_hz", self.rate_hz),
            ("guidance_hz", self.guidance_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("ki", self.ki),
            ("prefilter_tau", self.prefilter_tau),
            ("integrator_limit", self.integrator_limit),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.max_tilt > 0.0 && self.max_tilt < std::f64::consts::FRAC_PI_2) {
            return err(format!("max_tilt must be in (0, pi/2), got {}", self.max_tilt));
        }
        if self.k_rate.min() <= 0.0 {
            return err(format!("k_rate must be positive, got {:?}", self.k_rate));
        }
        // Routh condition for s^3 + kd s^2 + kp s + ki.
        if self.ki > 0.0 && self.kd * self.kp <= self.ki {
            return err(format!(
                "translation loop unstable (kd*kp = {} must exceed ki = {})",
                self.kd * self.kp,
                self.ki
            ));
        }

        let wc = translation_bandwidth(self);
        if !(1.0..=2.0).contains(&wc) {
            return err(format!("translation bandwidth {wc:.2} rad/s outside [1, 2]"));
        }
        let rate_bw = rate_bandwidths(self, vehicle);
        for (axis, bw) in ["x", "y", "z"].iter().zip([rate_bw.x, rate_bw.y, rate_bw.z]) {
            if !(30.0..=50.0).contains(&bw) {
                return err(format!("body rate bandwidth {bw:.1} rad/s on {axis} outside [30, 50]"));
            }
        }
        let (tilt_bw, yaw_bw) = attitude_bandwidths(self, vehicle);
        if !(5.0..=10.0).contains(&tilt_bw) {
            return err(format!("tilt bandwidth {tilt_bw:.2} rad/s outside [5, 10]"));
        }
        if !(5.0..=10.0).contains(&yaw_bw) {
            return err(format!("yaw bandwidth {yaw_bw:.2} rad/s outside [5, 10]"));
        }
        Ok(())
    }
}

/// -3 dB frequency of `a / (s^2 + b s + a)`.
fn second_order_bandwidth(a: f64, b: f64) -> f64 {
    let c = b * b - 2.0 * a;
    (0.5 * (-c + (c * c + 4.0 * a * a).sqrt())).sqrt()
}

/// Body rate loop bandwidth per axis: proportional gain against the
/// first-order motor lag gives `K/tau / (s^2 + s/tau + K/tau)`.
pub fn rate_bandwidths(gains: &ControlGains, vehicle: &VehicleParams) -> Vec3 {
    let wm = 1.0 / vehicle.motor_tau;
    Vec3::new(
        second_order_bandwidth(gains.k_rate.x * wm, wm),
        second_order_bandwidth(gains.k_rate.y * wm, wm),
        second_order_bandwidth(gains.k_rate.z * wm, wm),
    )
}

/// Attitude loop bandwidths (tilt, yaw) modeling the rate loop as a
/// first-order lag at its own bandwidth.
pub fn attitude_bandwidths(gains: &ControlGains, vehicle: &VehicleParams) -> (f64, f64) {
    let rate_bw = rate_bandwidths(gains, vehicle);
    let tilt_inner = rate_bw.x.min(rate_bw.y);
    (
        second_order_bandwidth(gains.k_tilt * tilt_inner, tilt_inner),
        second_order_bandwidth(gains.k_yaw * rate_bw.z, rate_bw.z),
    )
}

/// -3 dB crossing of the translation loop reference response with ideal
/// inner loops. The prefiltered PD plus raw-error integral on a double
/// integrator gives
/// `T(s) = (F(s)(kd s^2 + kp s) + ki) / (s^3 + kd s^2 + kp s + ki)`
/// with `F(s) = 1/(tau s + 1)`. Returns infinity if the gain never drops.
pub fn translation_bandwidth(gains: &ControlGains) -> f64 {
    let gain2 = |w: f64| -> f64 {
        let s = Complex::new(0.0, w);
        let f = Complex::new(1.0, 0.0) / (Complex::new(1.0, gains.prefilter_tau * w));
        let num = f * (gains.kd * s * s + gains.kp * s) + gains.ki;
        let den = s * s * s + gains.kd * s * s + gains.kp * s + gains.ki;
        (num / den).norm_sqr()
    };
    let (mut lo, mut hi) = (1e-3, f64::NAN);
    let mut w = lo;
    while w < 1e3 {
        if gain2(w) <= 0.5 {
            hi = w;
            break;
        }
        lo = w;
        w *= 1.05;
    }
    if hi.is_nan() {
        return f64::INFINITY;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if gain2(mid) <= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Setpoint for the translation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlReference {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub accel_ff: Vec3,
    pub rates_ff: Vec3,
}

impl ControlReference {
    /// Stationary setpoint.
    pub fn hold(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            yaw,
            accel_ff: Vec3::zeros(),
            rates_ff: Vec3::zeros(),
        }
    }

    /// Builds the setpoint from a flat output sample, using the
    /// differential flatness map for the body rate feedforward.
    pub fn from_flat(flat: &FlatOutput, mass: f64, gravity: f64) -> Result<Self, TrajError> {
        let reference = flat_to_state(flat, mass, gravity)?;
        Ok(Self {
            position: flat.position,
            velocity: flat.velocity,
            yaw: flat.yaw,
            accel_ff: flat.acceleration,
            rates_ff: reference.body_rates,
        })
    }
}

/// State estimate consumed by the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeedback {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Quat,
    pub body_rates: Vec3,
}

impl StateFeedback {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            attitude: yaw_quat(yaw),
            body_rates: Vec3::zeros(),
        }
    }
}

/// What the allocator had to give up to keep motor thrusts in range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaturationFlags {
    pub yaw_shed: bool,
    pub thrust_shed: bool,
    pub roll_pitch_clipped: bool,
}

impl SaturationFlags {
    pub fn any(&self) -> bool {
        self.yaw_shed || self.thrust_shed || self.roll_pitch_clipped
    }
}

/// Per-motor output of the body rate loop.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorCommand {
    /// Thrusts in N, always within [0, max_motor_thrust].
    pub thrusts: [f64; 4],
    /// Commanded propeller speeds mapped through the calibration.
    pub rpm: [f64; 4],
    pub saturation: SaturationFlags,
}

impl MotorCommand {
    pub fn idle(vehicle: &VehicleParams) -> Self {
        let idle = vehicle.idle_rpm();
        Self {
            thrusts: [0.0; 4],
            rpm: [idle; 4],
            saturation: SaturationFlags::default(),
        }
    }

    pub fn collective(&self) -> f64 {
        self.thrusts.iter().sum()
    }
}

/// Keeps the net specific force direction inside the tilt cone. The
/// vertical component is preserved and the lateral part scaled down; a
/// small positive floor on the vertical component keeps the direction
/// defined when a downward net force is demanded.
pub fn clip_to_cone(accel: Vec3, max_tilt: f64) -> (Vec3, bool) {
    let mut lift = accel + Vec3::new(0.0, 0.0, GRAVITY);
    let mut clipped = false;
    let floor = 0.05 * GRAVITY;
    if lift.z < floor {
        lift.z = floor;
        clipped = true;
    }
    let lateral = lift.xy().norm();
    let lateral_max = max_tilt.tan() * lift.z;
    if lateral > lateral_max {
        let scale = lateral_max / lateral;
        lift.x *= scale;
        lift.y *= scale;
        clipped = true;
    }
    (lift - Vec3::new(0.0, 0.0, GRAVITY), clipped)
}

/// Two-degree-of-freedom PID translation loop. Position and velocity
/// references pass through a first-order prefilter; the integral acts on
/// the raw error and freezes while the output is clipped to the tilt cone.
#[derive(Debug, Clone)]
pub struct TranslationControl {
    gains: ControlGains,
    integral: Vec3,
    filt_pos: Option<Vec3>,
    filt_vel: Vec3,
}

impl TranslationControl {
    pub fn new(gains: ControlGains) -> Self {
        Self {
            gains,
            integral: Vec3::zeros(),
            filt_pos: None,
            filt_vel: Vec3::zeros(),
        }
    }

    pub fn reset(&mut self) {
        self.integral = Vec3::zeros();
        self.filt_pos = None;
        self.filt_vel = Vec3::zeros();
    }

    /// One 100 Hz tick. Returns the desired acceleration (gravity not
    /// included) and whether the cone clip engaged.
    pub fn update(
        &mut self,
        reference: &ControlReference,
        position: Vec3,
        velocity: Vec3,
        dt: f64,
    ) -> (Vec3, bool) {
        let g = &self.gains;
        let (pf, vf) = match self.filt_pos {
            None => {
                self.filt_pos = Some(reference.position);
                self.filt_vel = reference.velocity;
                (reference.position, reference.velocity)
            }
            Some(prev) => {
                let alpha = if g.prefilter_tau > 0.0 {
                    1.0 - (-dt / g.prefilter_tau).exp()
                } else {
                    1.0
                };
                let pf = prev + alpha * (reference.position - prev);
                let vf = self.filt_vel + alpha * (reference.velocity - self.filt_vel);
                self.filt_pos = Some(pf);
                self.filt_vel = vf;
                (pf, vf)
            }
        };

        let accel = g.kp * (pf - position) + g.kd * (vf - velocity) + g.ki * self.integral
            + reference.accel_ff;
        let (accel, clipped) = clip_to_cone(accel, g.max_tilt);

        if !clipped && g.ki > 0.0 {
            self.integral += (reference.position - position) * dt;
            let cap = g.integrator_limit / g.ki;
            self.integral = self.integral.map(|v| v.clamp(-cap, cap));
        }
        (accel, clipped)
    }
}

/// Splits a body-frame error quaternion into a tilt part (rotation axis in
/// the body xy plane) composed with a yaw part about body z, such that
/// `q_err = q_tilt * q_yaw`.
pub fn tilt_yaw_decompose(q_err: &Quat) -> (Quat, Quat) {
    let q = canonicalize(*q_err);
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let s = (w * w + z * z).sqrt();
    if s < 1e-9 {
        // Pure 180 degree tilt; yaw is undefined and taken as identity.
        let tilt = Quat::from_quaternion(nalgebra::Quaternion::new(0.0, x, y, 0.0));
        return (tilt, Quat::identity());
    }
    let tilt = Quat::from_quaternion(nalgebra::Quaternion::new(
        (w * w + z * z) / s,
        (w * x - y * z) / s,
        (w * y + x * z) / s,
        0.0,
    ));
    let yaw = Quat::from_quaternion(nalgebra::Quaternion::new(w / s, 0.0, 0.0, z / s));
    (tilt, yaw)
}

fn attitude_from_lift_and_yaw(dir: &Vec3, yaw: f64) -> Result<Quat, CtrlError> {
    let heading = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut b_y = dir.cross(&heading);
    let n = b_y.norm();
    if n < 1e-6 {
        return Err(CtrlError::ThrustSingularity(n));
    }
    b_y /= n;
    let b_x = b_y.cross(dir);
    let m = nalgebra::Matrix3::from_columns(&[b_x, b_y, *dir]);
    Ok(Quat::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m)))
}

/// Reduced attitude loop. Aligns the thrust axis with the demanded
/// specific force first and corrects heading about body z second, with
/// independent gains, producing a body rate command and collective thrust.
/// The thrust is the demanded force projected onto the current body z so a
/// misaligned vehicle does not overdrive its motors.
pub fn attitude_control(
    accel_ref: Vec3,
    yaw_ref: f64,
    rates_ff: Vec3,
    attitude: &Quat,
    vehicle: &VehicleParams,
    gains: &ControlGains,
) -> Result<(Vec3, f64), CtrlError> {
    let lift = accel_ref + Vec3::new(0.0, 0.0, GRAVITY);
    let magnitude = lift.norm();
    if magnitude < 1e-6 {
        return Err(CtrlError::ThrustSingularity(magnitude));
    }
    let dir = lift / magnitude;
    let desired = attitude_from_lift_and_yaw(&dir, yaw_ref)?;

    let q_err = canonicalize(attitude.inverse() * desired);
    let (q_tilt, q_yaw) = tilt_yaw_decompose(&q_err);
    let tilt_vec = canonicalize(q_tilt).scaled_axis();
    let yaw_vec = canonicalize(q_yaw).scaled_axis();
    let rate_cmd = Vec3::new(
        gains.k_tilt * tilt_vec.x,
        gains.k_tilt * tilt_vec.y,
        gains.k_yaw * yaw_vec.z,
    ) + rates_ff;

    let body_z = attitude.transform_vector(&Vec3::z());
    let projection = body_z.dot(&dir).max(0.0);
    let thrust = vehicle.mass * magnitude * projection;
    Ok((rate_cmd, thrust))
}

/// Net collective thrust and body torque produced by four motor thrusts.
/// Motors sit on the X diagonals at 45 degrees, numbered front-left,
/// front-right, rear-right, rear-left, with front-left and rear-right
/// spinning so their reaction torque is positive about body z.
pub fn body_wrench(thrusts: &[f64; 4], vehicle: &VehicleParams) -> (f64, Vec3) {
    let a = vehicle.arm_length / std::f64::consts::SQRT_2;
    let k = vehicle.drag_torque_coeff;
    let [f0, f1, f2, f3] = *thrusts;
    let collective = f0 + f1 + f2 + f3;
    let torque = Vec3::new(
        a * (f0 - f1 - f2 + f3),
        a * (-f0 - f1 + f2 + f3),
        k * (f0 - f1 + f2 - f3),
    );
    (collective, torque)
}

/// Inverts `body_wrench` with prioritized shedding when motors would leave
/// [0, max]: yaw torque is reduced first, collective thrust second, and
/// roll/pitch torque only scaled as a last resort (flagged).
pub fn allocate_thrusts(
    collective: f64,
    torque: Vec3,
    vehicle: &VehicleParams,
) -> ([f64; 4], SaturationFlags) {
    let a = vehicle.arm_length / std::f64::consts::SQRT_2;
    let k = vehicle.drag_torque_coeff;
    let fmax = vehicle.max_motor_thrust;
    let mut flags = SaturationFlags::default();

    let mut rp = [
        (torque.x - torque.y) / (4.0 * a),
        (-torque.x - torque.y) / (4.0 * a),
        (-torque.x + torque.y) / (4.0 * a),
        (torque.x + torque.y) / (4.0 * a),
    ];
    let spread = rp.iter().cloned().fold(f64::MIN, f64::max)
        - rp.iter().cloned().fold(f64::MAX, f64::min);
    if spread > fmax {
        let scale = fmax / spread * (1.0 - 1e-12);
        for v in &mut rp {
            *v *= scale;
        }
        flags.roll_pitch_clipped = true;
    }

    let signs = [1.0, -1.0, 1.0, -1.0];
    let yaw_term = torque.z / (4.0 * k);

    // The exact inverse needs no shedding when every motor lands in range.
    let exact: [f64; 4] =
        std::array::from_fn(|i| collective / 4.0 + rp[i] + signs[i] * yaw_term);
    if !flags.roll_pitch_clipped
        && exact.iter().all(|f| (-1e-12..=fmax + 1e-12).contains(f))
    {
        return (exact.map(|f| f.clamp(0.0, fmax)), flags);
    }

    // Collective per motor must leave every rp offset inside [0, fmax].
    let lo = rp.iter().map(|v| -v).fold(f64::MIN, f64::max);
    let hi = rp.iter().map(|v| fmax - v).fold(f64::MAX, f64::min);
    let mut per_motor = collective / 4.0;
    if per_motor < lo || per_motor > hi {
        per_motor = per_motor.clamp(lo, hi);
        flags.thrust_shed = true;
    }

    let mut gamma = 1.0f64;
    for i in 0..4 {
        let z = signs[i] * yaw_term;
        let head = per_motor + rp[i];
        let allowed = if z > 0.0 {
            (fmax - head) / z
        } else if z < 0.0 {
            head / -z
        } else {
            continue;
        };
        gamma = gamma.min(allowed.max(0.0));
    }
    if gamma < 1.0 && yaw_term.abs() > 0.0 {
        flags.yaw_shed = true;
    }

    let mut thrusts = [0.0; 4];
    for i in 0..4 {
        thrusts[i] = (per_motor + rp[i] + gamma * signs[i] * yaw_term).clamp(0.0, fmax);
    }
    (thrusts, flags)
}

/// Body rate loop: feedback-linearizing proportional law
/// `torque = J (K (w_ref - w)) + w x J w`, then motor allocation.
pub fn bodyrate_control(
    rates_ref: Vec3,
    rates: Vec3,
    collective_ref: f64,
    vehicle: &VehicleParams,
    gains: &ControlGains,
) -> MotorCommand {
    let j = vehicle.inertia;
    let jw = Vec3::new(j.x * rates.x, j.y * rates.y, j.z * rates.z);
    let accel = gains.k_rate.component_mul(&(rates_ref - rates));
    let torque = Vec3::new(j.x * accel.x, j.y * accel.y, j.z * accel.z) + rates.cross(&jw);
    let (thrusts, saturation) = allocate_thrusts(collective_ref, torque, vehicle);
    let rpm = thrusts.map(|f| vehicle.rpm_for_thrust(f));
    MotorCommand {
        thrusts,
        rpm,
        saturation,
    }
}

/// Propeller speed for a thrust demand, clipping into the motor range.
/// Returns the speed and whether clipping occurred.
pub fn motor_rpm(thrust: f64, vehicle: &VehicleParams) -> (f64, bool) {
    let clamped = thrust.clamp(0.0, vehicle.max_motor_thrust);
    (vehicle.rpm_for_thrust(clamped), clamped != thrust)
}

/// Full cascade with per-loop rate scheduling. Call `update` on every
/// simulation tick; loops fire when due and the latest motor command is
/// returned in between.
#[derive(Debug, Clone)]
pub struct CascadedController {
    pub gains: ControlGains,
    pub vehicle: VehicleParams,
    translation: TranslationControl,
    accel_cmd: Vec3,
    rate_cmd: (Vec3, f64),
    motor_cmd: MotorCommand,
    next_translation: Option<f64>,
    next_attitude: Option<f64>,
    next_rate: Option<f64>,
}

impl CascadedController {
    pub fn new(gains: ControlGains, vehicle: VehicleParams) -> Result<Self, CtrlError> {
        gains.validate(&vehicle)?;
        let motor_cmd = MotorCommand::idle(&vehicle);
        Ok(Self {
            translation: TranslationControl::new(gains.clone()),
            accel_cmd: Vec3::zeros(),
            rate_cmd: (Vec3::zeros(), vehicle.hover_thrust()),
            motor_cmd,
            next_translation: None,
            next_attitude: None,
            next_rate: None,
            gains,
            vehicle,
        })
    }

    /// Clears loop schedules and integrator state, e.g. on arming.
    pub fn reset(&mut self) {
        self.translation.reset();
        self.accel_cmd = Vec3::zeros();
        self.rate_cmd = (Vec3::zeros(), self.vehicle.hover_thrust());
        self.motor_cmd = MotorCommand::idle(&self.vehicle);
        self.next_translation = None;
        self.next_attitude = None;
        self.next_rate = None;
    }

    pub fn update(
        &mut self,
        t: f64,
        reference: &ControlReference,
        feedback: &StateFeedback,
    ) -> Result<MotorCommand, CtrlError> {
        let due = |next: &mut Option<f64>, period: f64| -> bool {
            match *next {
                None => {
                    *next = Some(t + period);
                    true
                }
                Some(at) if t >= at - 1e-9 => {
                    *next = Some(at + period);
                    true
                }
                _ => false,
            }
        };

        if due(&mut self.next_translation, 1.0 / self.gains.translation_hz) {
            let dt = 1.0 / self.gains.translation_hz;
            let (accel, _) =
                self.translation
                    .update(reference, feedback.position, feedback.velocity, dt);
            self.accel_cmd = accel;
        }
        if due(&mut self.next_attitude, 1.0 / self.gains.attitude_hz) {
            self.rate_cmd = attitude_control(
                self.accel_cmd,
                reference.yaw,
                reference.rates_ff,
                &feedback.attitude,
                &self.vehicle,
                &self.gains,
            )?;
        }
        if due(&mut self.next_rate, 1.0 / self.gains.rate_hz) {
            let (rates_ref, collective) = self.rate_cmd;
            self.motor_cmd = bodyrate_control(
                rates_ref,
                feedback.body_rates,
                collective,
                &self.vehicle,
                &self.gains,
            );
        }
        Ok(self.motor_cmd.clone())
    }
}

/// Open-loop descent for estimator blackouts. Captures a level attitude at
/// the current heading on engagement and commands a fixed thrust that
/// settles near the target descent speed in the nominal drag model; only
/// gyro-derived attitude is consumed afterwards.
#[derive(Debug, Clone)]
pub struct EmergencyLanding {
    pub attitude_hold: Quat,
    pub thrust: f64,
}

impl EmergencyLanding {
    pub fn engage(attitude: &Quat, vehicle: &VehicleParams) -> Self {
        let v = EMERGENCY_DESCENT_SPEED;
        let drag = vehicle.linear_drag * v
            + 0.5 * crate::vehicle::AIR_DENSITY * vehicle.drag_area * v * v;
        Self {
            attitude_hold: yaw_quat(crate::geom::yaw_of(attitude)),
            thrust: (vehicle.hover_thrust() - drag).max(0.0),
        }
    }

    pub fn update(
        &self,
        attitude: &Quat,
        rates: Vec3,
        vehicle: &VehicleParams,
        gains: &ControlGains,
    ) -> MotorCommand {
        let q_err = canonicalize(attitude.inverse() * self.attitude_hold);
        let (q_tilt, q_yaw) = tilt_yaw_decompose(&q_err);
        let tilt_vec = canonicalize(q_tilt).scaled_axis();
        let yaw_vec = canonicalize(q_yaw).scaled_axis();
        let rates_ref = Vec3::new(
            gains.k_tilt * tilt_vec.x,
            gains.k_tilt * tilt_vec.y,
            gains.k_yaw * yaw_vec.z,
        );
        bodyrate_control(rates_ref, rates, self.thrust, vehicle, gains)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    const TOL: f64 = 1e-9;

    fn random_unit_quat(rng: &mut impl Rng) -> Quat {
        let axis = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-3.0..3.0);
        Quat::from_scaled_axis(axis.normalize() * angle)
    }

    #[test]
    fn decomposition_recomposes_and_separates_axes() {
        let mut rng = stream(7, "ctrl-decompose");
        for _ in 0..200 {
            let q = random_unit_quat(&mut rng);
            let (tilt, yaw) = tilt_yaw_decompose(&q);
            let recomposed = tilt * yaw;
            let qc = canonicalize(q);
            let rc = canonicalize(recomposed);
            assert!((qc.w - rc.w).abs() < TOL);
            assert!((qc.i - rc.i).abs() < TOL);
            assert!((qc.j - rc.j).abs() < TOL);
            assert!((qc.k - rc.k).abs() < TOL);
            assert!(tilt.k.abs() < TOL, "tilt part has body-z component");
            assert!(yaw.i.abs() < TOL && yaw.j.abs() < TOL);
        }
    }

    #[test]
    fn zero_error_zero_feedforward_gives_zero_accel() {
        let mut loop_ = TranslationControl::new(ControlGains::default());
        let r = ControlReference::hold(Vec3::new(1.0, -2.0, 3.0), 0.0);
        let (a, clipped) = loop_.update(&r, r.position, Vec3::zeros(), 0.01);
        assert!(a.norm() < TOL);
        assert!(!clipped);
    }

    #[test]
    fn p_only_step_matches_gain_times_error() {
        let gains = ControlGains {
            kd: 0.0,
            ki: 0.0,
            ..ControlGains::default()
        };
        let kp = gains.kp;
        let mut loop_ = TranslationControl::new(gains);
        let r = ControlReference::hold(Vec3::zeros(), 0.0);
        let (a, _) = loop_.update(&r, Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), 0.01);
        assert!((a - Vec3::new(-kp, 0.0, 0.0)).norm() < TOL);
    }

    #[test]
    fn forty_five_degree_demand_leaves_cone_edge_with_vertical_preserved() {
        let (a, clipped) = clip_to_cone(Vec3::new(GRAVITY, 0.0, 0.0), 20f64.to_radians());
        assert!(clipped);
        let lift = a + Vec3::new(0.0, 0.0, GRAVITY);
        assert!((lift.z - GRAVITY).abs() < TOL, "vertical changed");
        let tilt = lift.xy().norm().atan2(lift.z);
        assert!((tilt - 20f64.to_radians()).abs() < TOL);
    }

    #[test]
    fn cone_clip_never_exceeds_limit() {
        let mut rng = stream(11, "ctrl-cone");
        let max_tilt = 20f64.to_radians();
        for _ in 0..500 {
            let a = Vec3::new(
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
            );
            let (out, clipped) = clip_to_cone(a, max_tilt);
            let lift = out + Vec3::new(0.0, 0.0, GRAVITY);
            let tilt = lift.xy().norm().atan2(lift.z);
            assert!(tilt <= max_tilt + TOL);
            if !clipped {
                assert!((out - a).norm() < TOL);
            }
        }
    }

    #[test]
    fn anti_windup_freezes_integrator_while_clipped() {
        let mut loop_ = TranslationControl::new(ControlGains::default());
        let r = ControlReference::hold(Vec3::zeros(), 0.0);
        let far = Vec3::new(100.0, 0.0, 0.0);
        let (a1, clipped) = loop_.update(&r, far, Vec3::zeros(), 0.01);
        assert!(clipped);
        let (a2, _) = loop_.update(&r, far, Vec3::zeros(), 0.01);
        assert!((a1 - a2).norm() < TOL, "integrator moved while saturated");

        let near = Vec3::new(0.1, 0.0, 0.0);
        let (b1, clipped) = loop_.update(&r, near, Vec3::zeros(), 0.01);
        assert!(!clipped);
        let (b2, _) = loop_.update(&r, near, Vec3::zeros(), 0.01);
        assert!(b2.x < b1.x - 1e-12, "integrator should keep pushing");
    }

    #[test]
    fn hover_attitude_command_is_level_thrust_mg() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let q = Quat::identity();
        let (rates, thrust) =
            attitude_control(Vec3::zeros(), 0.0, Vec3::zeros(), &q, &vehicle, &gains).unwrap();
        assert!(rates.norm() < TOL);
        assert!((thrust - vehicle.hover_thrust()).abs() < TOL);
    }

    #[test]
    fn ten_degree_tilt_error_spins_about_x_with_gain_times_angle() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let angle = 10f64.to_radians();
        // Desired thrust direction tilted so the correcting axis is +x.
        let dir = Vec3::new(0.0, -angle.sin(), angle.cos());
        let accel = GRAVITY * dir - Vec3::new(0.0, 0.0, GRAVITY);
        let q = Quat::identity();
        let (rates, thrust) =
            attitude_control(accel, 0.0, Vec3::zeros(), &q, &vehicle, &gains).unwrap();
        let expected = Vec3::new(gains.k_tilt * angle, 0.0, 0.0);
        assert!((rates - expected).norm() < 1e-9, "rates {rates:?}");
        assert!((thrust - vehicle.mass * GRAVITY * angle.cos()).abs() < 1e-9);
    }

    #[test]
    fn pure_yaw_error_spins_about_z_only() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let (rates, _) = attitude_control(
            Vec3::zeros(),
            std::f64::consts::PI,
            Vec3::zeros(),
            &Quat::identity(),
            &vehicle,
            &gains,
        )
        .unwrap();
        assert!(rates.x.abs() < TOL && rates.y.abs() < TOL);
        assert!((rates.z.abs() - gains.k_yaw * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn free_fall_demand_is_rejected() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let result = attitude_control(
            Vec3::new(0.0, 0.0, -GRAVITY),
            0.0,
            Vec3::zeros(),
            &Quat::identity(),
            &vehicle,
            &gains,
        );
        assert!(matches!(result, Err(CtrlError::ThrustSingularity(_))));
    }

    #[test]
    fn hover_rates_give_four_equal_motor_thrusts() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let cmd = bodyrate_control(
            Vec3::zeros(),
            Vec3::zeros(),
            vehicle.hover_thrust(),
            &vehicle,
            &gains,
        );
        let quarter = vehicle.hover_thrust() / 4.0;
        for f in cmd.thrusts {
            assert!((f - quarter).abs() < TOL);
        }
        assert!(!cmd.saturation.any());
        for rpm in cmd.rpm {
            assert!(rpm > vehicle.idle_rpm() && rpm < vehicle.max_rpm() + 1.0);
        }
    }

    #[test]
    fn allocation_round_trips_through_wrench() {
        let vehicle = VehicleParams::default();
        let mut rng = stream(23, "ctrl-alloc");
        for _ in 0..300 {
            let thrusts = [
                rng.gen_range(0.1..7.4),
                rng.gen_range(0.1..7.4),
                rng.gen_range(0.1..7.4),
                rng.gen_range(0.1..7.4),
            ];
            let (collective, torque) = body_wrench(&thrusts, &vehicle);
            let (recovered, flags) = allocate_thrusts(collective, torque, &vehicle);
            assert!(!flags.any(), "feasible wrench flagged saturated");
            for i in 0..4 {
                assert!((recovered[i] - thrusts[i]).abs() < TOL);
            }
        }
    }

    #[test]
    fn yaw_demand_at_thrust_ceiling_leaves_roll_pitch_untouched() {
        let vehicle = VehicleParams::default();
        let ceiling = 4.0 * vehicle.max_motor_thrust;
        let (thrusts, flags) = allocate_thrusts(ceiling, Vec3::new(0.0, 0.0, 1.0), &vehicle);
        assert!(flags.yaw_shed);
        assert!(!flags.roll_pitch_clipped);
        let (_, torque) = body_wrench(&thrusts, &vehicle);
        assert!(torque.x.abs() < TOL && torque.y.abs() < TOL);
    }

    #[test]
    fn saturation_sheds_yaw_then_thrust_never_roll_pitch() {
        let vehicle = VehicleParams::default();
        let a = vehicle.arm_length / std::f64::consts::SQRT_2;
        let fmax = vehicle.max_motor_thrust;
        let mut rng = stream(41, "ctrl-shed");
        for _ in 0..500 {
            let collective = rng.gen_range(0.0..1.5 * 4.0 * fmax);
            let torque = Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-2.0..2.0),
            );
            let (thrusts, flags) = allocate_thrusts(collective, torque, &vehicle);
            for f in thrusts {
                assert!((-TOL..=fmax + TOL).contains(&f));
            }
            let (got_c, got_t) = body_wrench(&thrusts, &vehicle);
            // Roll/pitch clipping only ever happens when they alone are
            // infeasible, and otherwise they are reproduced exactly.
            let spread = (torque.x.abs() + torque.y.abs()) / (2.0 * a);
            if spread <= fmax {
                assert!(!flags.roll_pitch_clipped);
            }
            if !flags.roll_pitch_clipped {
                assert!((got_t.x - torque.x).abs() < 1e-9);
                assert!((got_t.y - torque.y).abs() < 1e-9);
            }
            if !flags.thrust_shed {
                assert!((got_c - collective).abs() < 1e-9);
            }
            if !flags.yaw_shed {
                assert!((got_t.z - torque.z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn motor_map_is_monotone_and_zero_maps_to_idle() {
        let vehicle = VehicleParams::default();
        let (idle, clipped) = motor_rpm(0.0, &vehicle);
        assert!(!clipped);
        assert!((idle - vehicle.idle_rpm()).abs() < TOL);
        let mut last = -1.0;
        for i in 0..=100 {
            let f = vehicle.max_motor_thrust * i as f64 / 100.0;
            let (rpm, _) = motor_rpm(f, &vehicle);
            assert!(rpm > last);
            last = rpm;
        }
        let (_, clipped) = motor_rpm(-1.0, &vehicle);
        assert!(clipped);
        let (top, clipped) = motor_rpm(100.0, &vehicle);
        assert!(clipped);
        assert!((top - vehicle.max_rpm()).abs() < TOL);
    }

    #[test]
    fn emergency_thrust_sits_below_hover() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let e = EmergencyLanding::engage(&Quat::identity(), &vehicle);
        assert!(e.thrust < vehicle.hover_thrust());
        assert!(e.thrust > 0.8 * vehicle.hover_thrust(), "descent should be gentle");
        let cmd = e.update(&Quat::identity(), Vec3::zeros(), &vehicle, &gains);
        assert!((cmd.collective() - e.thrust).abs() < TOL);
        assert!(!cmd.saturation.any());
    }

    #[test]
    fn emergency_holds_level_attitude_at_engagement_heading() {
        let vehicle = VehicleParams::default();
        let tilted = yaw_quat(1.0) * Quat::from_scaled_axis(Vec3::new(0.3, 0.0, 0.0));
        let e = EmergencyLanding::engage(&tilted, &vehicle);
        let expected = yaw_quat(crate::geom::yaw_of(&tilted));
        let dot = e.attitude_hold.into_inner().dot(&expected.into_inner()).abs();
        assert!(dot > 1.0 - 1e-12, "hold attitude is not level at heading");
        let body_z = e.attitude_hold.transform_vector(&Vec3::z());
        assert!((body_z - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn default_gains_pass_bands_and_bad_gains_fail() {
        let vehicle = VehicleParams::default();
        ControlGains::default().validate(&vehicle).unwrap();

        let sluggish = ControlGains {
            kp: 0.1,
            kd: 0.3,
            ..ControlGains::default()
        };
        assert!(matches!(
            sluggish.validate(&vehicle),
            Err(CtrlError::InvalidGains(_))
        ));

        let weak_tilt = ControlGains {
            k_tilt: 2.0,
            ..ControlGains::default()
        };
        assert!(weak_tilt.validate(&vehicle).is_err());

        let weak_rate = ControlGains {
            k_rate: Vec3::new(5.0, 5.0, 5.0),
            ..ControlGains::default()
        };
        assert!(weak_rate.validate(&vehicle).is_err());
    }

    #[test]
    fn bandwidth_estimates_sit_in_design_bands() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let wc = translation_bandwidth(&gains);
        assert!((1.5..2.0).contains(&wc), "translation bw {wc}");
        let rate_bw = rate_bandwidths(&gains, &vehicle);
        assert!((rate_bw.x - 40.0).abs() < 0.5, "rate bw {rate_bw:?}");
        let (tilt_bw, yaw_bw) = attitude_bandwidths(&gains, &vehicle);
        assert!((5.0..10.0).contains(&tilt_bw), "tilt bw {tilt_bw}");
        assert!((5.0..10.0).contains(&yaw_bw), "yaw bw {yaw_bw}");
    }

    #[test]
    fn cascade_is_deterministic_and_hover_stationary() {
        let vehicle = VehicleParams::default();
        let gains = ControlGains::default();
        let reference = ControlReference::hold(Vec3::new(0.0, 0.0, 1.0), 0.0);
        let feedback = StateFeedback::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.0);

        let run = || -> Vec<[f64; 4]> {
            let mut ctrl = CascadedController::new(gains.clone(), vehicle.clone()).unwrap();
            let mut out = Vec::new();
            for i in 0..250 {
                let t = i as f64 * 0.002;
                let cmd = ctrl.update(t, &reference, &feedback).unwrap();
                out.push(cmd.thrusts);
            }
            out
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "same inputs must give identical commands");

        let quarter = vehicle.hover_thrust() / 4.0;
        for f in a.last().unwrap() {
            assert!((f - quarter).abs() < 1e-9, "hover not a fixed point: {f}");
        }
    }
}
