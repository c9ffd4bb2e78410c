//! Rigid-body flight dynamics: Newton-Euler with first-order motor lag,
//! aerodynamic drag against the relative wind, and a kinematic ground clamp.

use nalgebra::Quaternion;

use super::{surface_height, PadParams, TruthState};
use crate::ctrl::body_wrench;
use crate::vehicle::{VehicleParams, AIR_DENSITY};
use crate::{Quat, Vec3};

/// Per-step integration byproducts: the work-energy audit terms and the
/// mean acceleration over the step (what an accelerometer feels).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    /// Change in kinetic + potential energy before any contact clamp, J.
    pub energy_delta: f64,
    /// Work done by thrust, drag and body torque over the step, J.
    pub work_delta: f64,
    /// False when the ground clamp intervened (the clamp destroys energy).
    pub audit_valid: bool,
    /// Average acceleration over the step including contact effects.
    pub mean_accel: Vec3,
    pub clamped: bool,
}

const N: usize = 18;

fn pack(truth: &TruthState) -> [f64; N] {
    let q = truth.attitude.into_inner();
    let mut s = [0.0; N];
    s[0..3].copy_from_slice(truth.position.as_slice());
    s[3..6].copy_from_slice(truth.velocity.as_slice());
    s[6] = q.w;
    s[7] = q.i;
    s[8] = q.j;
    s[9] = q.k;
    s[10..13].copy_from_slice(truth.body_rates.as_slice());
    s[13..17].copy_from_slice(&truth.motor_rpm);
    s[17] = 0.0; // work accumulator
    s
}

fn deriv(
    s: &[f64; N],
    rpm_cmd: &[f64; 4],
    wind_vel: Vec3,
    vehicle: &VehicleParams,
    gravity: f64,
) -> [f64; N] {
    let velocity = Vec3::new(s[3], s[4], s[5]);
    let q = Quaternion::new(s[6], s[7], s[8], s[9]);
    let rates = Vec3::new(s[10], s[11], s[12]);
    let rpm = [s[13], s[14], s[15], s[16]];

    let thrusts = rpm.map(|r| vehicle.thrust_at_rpm(r).max(0.0));
    let (collective, torque) = body_wrench(&thrusts, vehicle);

    let attitude = Quat::from_quaternion(q);
    let thrust_force = attitude.transform_vector(&Vec3::new(0.0, 0.0, collective));
    let v_rel = wind_vel - velocity;
    let aero_force =
        0.5 * AIR_DENSITY * vehicle.drag_area * v_rel.norm() * v_rel + vehicle.linear_drag * v_rel;
    let accel =
        (thrust_force + aero_force) / vehicle.mass + Vec3::new(0.0, 0.0, -gravity);

    let q_dot = q * Quaternion::new(0.0, rates.x, rates.y, rates.z) * 0.5;
    let j = vehicle.inertia;
    let j_rates = Vec3::new(j.x * rates.x, j.y * rates.y, j.z * rates.z);
    let gyro = torque - rates.cross(&j_rates);
    let rates_dot = Vec3::new(gyro.x / j.x, gyro.y / j.y, gyro.z / j.z);

    let mut d = [0.0; N];
    d[0..3].copy_from_slice(velocity.as_slice());
    d[3..6].copy_from_slice(accel.as_slice());
    d[6] = q_dot.w;
    d[7] = q_dot.i;
    d[8] = q_dot.j;
    d[9] = q_dot.k;
    d[10..13].copy_from_slice(rates_dot.as_slice());
    for i in 0..4 {
        d[13 + i] = (rpm_cmd[i] - rpm[i]) / vehicle.motor_tau;
    }
    d[17] = (thrust_force + aero_force).dot(&velocity) + torque.dot(&rates);
    d
}

fn mechanical_energy(s: &[f64; N], vehicle: &VehicleParams, gravity: f64) -> f64 {
    let velocity = Vec3::new(s[3], s[4], s[5]);
    let rates = Vec3::new(s[10], s[11], s[12]);
    let j = vehicle.inertia;
    0.5 * vehicle.mass * velocity.norm_squared()
        + 0.5 * (j.x * rates.x * rates.x + j.y * rates.y * rates.y + j.z * rates.z * rates.z)
        + vehicle.mass * gravity * s[2]
}

/// One fixed step of classical fourth-order Runge-Kutta, then the ground
/// clamp (restitution zero, with contact friction bleeding lateral motion).
/// The battery fields pass through unchanged.
pub fn dynamics_step(
    truth: &TruthState,
    rpm_cmd: &[f64; 4],
    wind_vel: Vec3,
    vehicle: &VehicleParams,
    gravity: f64,
    pad: &PadParams,
    dt: f64,
) -> (TruthState, StepDiagnostics) {
    debug_assert!(dt > 0.0 && dt <= 0.01, "dt {dt} outside (0, 0.01]");
    let s0 = pack(truth);
    let f = |s: &[f64; N]| deriv(s, rpm_cmd, wind_vel, vehicle, gravity);

    let k1 = f(&s0);
    let mut s_mid = [0.0; N];
    for i in 0..N {
        s_mid[i] = s0[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(&s_mid);
    for i in 0..N {
        s_mid[i] = s0[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&s_mid);
    let mut s_end = [0.0; N];
    for i in 0..N {
        s_end[i] = s0[i] + dt * k3[i];
    }
    let k4 = f(&s_end);
    let mut s1 = [0.0; N];
    for i in 0..N {
        s1[i] = s0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    let energy_delta = mechanical_energy(&s1, vehicle, gravity)
        - mechanical_energy(&s0, vehicle, gravity);
    let work_delta = s1[17];

    let mut position = Vec3::new(s1[0], s1[1], s1[2]);
    let mut velocity = Vec3::new(s1[3], s1[4], s1[5]);
    let mut rates = Vec3::new(s1[10], s1[11], s1[12]);
    let surface = surface_height(position.x, position.y, pad);
    let clamped = position.z < surface;
    if clamped {
        position.z = surface;
        if velocity.z < 0.0 {
            velocity.z = 0.0;
        }
        let friction = (-20.0 * dt).exp();
        velocity.x *= friction;
        velocity.y *= friction;
        rates *= friction;
    }

    let attitude = Quat::from_quaternion(Quaternion::new(s1[6], s1[7], s1[8], s1[9]));
    let next = TruthState {
        position,
        velocity,
        attitude,
        body_rates: rates,
        motor_rpm: [s1[13].max(0.0), s1[14].max(0.0), s1[15].max(0.0), s1[16].max(0.0)],
        ..truth.clone()
    };
    let diagnostics = StepDiagnostics {
        energy_delta,
        work_delta,
        audit_valid: !clamped,
        mean_accel: (velocity - truth.velocity) / dt,
        clamped,
    };
    (next, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::GRAVITY;
    use rand::Rng;

    fn pad() -> PadParams {
        PadParams::default()
    }

    fn hover_truth(vehicle: &VehicleParams, z: f64) -> TruthState {
        let rpm = vehicle.rpm_for_thrust(vehicle.hover_thrust() / 4.0);
        TruthState {
            position: Vec3::new(0.0, 0.0, z),
            motor_rpm: [rpm; 4],
            ..TruthState::default()
        }
    }

    #[test]
    fn hover_thrust_in_still_air_is_stationary_for_ten_seconds() {
        let vehicle = VehicleParams::default();
        let mut truth = hover_truth(&vehicle, 1.0);
        let cmd = truth.motor_rpm;
        let dt = 0.002;
        for _ in 0..5000 {
            let (next, _) =
                dynamics_step(&truth, &cmd, Vec3::zeros(), &vehicle, GRAVITY, &pad(), dt);
            truth = next;
        }
        assert!((truth.position - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
        assert!(truth.velocity.norm() < 1e-9);
        assert!(truth.body_rates.norm() < 1e-9);
    }

    #[test]
    fn motors_off_from_rest_follows_ballistic_drop() {
        // Drag disabled so the analytic parabola is exact.
        let vehicle = VehicleParams {
            linear_drag: 0.0,
            drag_area: 0.0,
            ..VehicleParams::default()
        };
        let mut truth = TruthState {
            position: Vec3::new(5.0, 5.0, 1.0), // away from the raised pad
            ..TruthState::default()
        };
        let dt = 0.002;
        let mut t = 0.0;
        while t < 0.4 {
            let (next, _) =
                dynamics_step(&truth, &[0.0; 4], Vec3::zeros(), &vehicle, GRAVITY, &pad(), dt);
            truth = next;
            t += dt;
            let expected = 1.0 - 0.5 * GRAVITY * t * t;
            assert!(
                (truth.position.z - expected).abs() < 1e-9,
                "z at t={t}: {} vs {expected}",
                truth.position.z
            );
        }
        for _ in 0..200 {
            let (next, _) =
                dynamics_step(&truth, &[0.0; 4], Vec3::zeros(), &vehicle, GRAVITY, &pad(), dt);
            truth = next;
        }
        assert_eq!(truth.position.z, 0.0, "ground clamp should hold");
        assert_eq!(truth.velocity.z, 0.0);
    }

    #[test]
    fn energy_audit_closes_to_1e6_per_step() {
        let vehicle = VehicleParams::default();
        let hover = vehicle.rpm_for_thrust(vehicle.hover_thrust() / 4.0);
        let mut truth = hover_truth(&vehicle, 50.0);
        let wind = Vec3::new(6.0, -3.0, 0.0);
        let dt = 0.002;
        let mut rng = stream(17, "dyn-audit");
        for i in 0..1000 {
            let t = i as f64 * dt;
            let wobble = 1.0 + 0.1 * (3.0 * t).sin();
            let cmd = [
                hover * wobble,
                hover * (1.0 + 0.05 * (5.0 * t).cos()),
                hover * wobble,
                hover * (1.0 + rng.gen_range(-0.02..0.02)),
            ];
            let (next, diag) = dynamics_step(&truth, &cmd, wind, &vehicle, GRAVITY, &pad(), dt);
            assert!(diag.audit_valid);
            assert!(
                (diag.energy_delta - diag.work_delta).abs() < 1e-6,
                "step {i}: dE {} vs dW {}",
                diag.energy_delta,
                diag.work_delta
            );
            truth = next;
        }
    }

    #[test]
    fn attitude_stays_unit_norm_under_aggressive_commands() {
        let vehicle = VehicleParams::default();
        let hover = vehicle.rpm_for_thrust(vehicle.hover_thrust() / 4.0);
        let mut truth = hover_truth(&vehicle, 100.0);
        let dt = 0.002;
        for i in 0..2000 {
            let t = i as f64 * dt;
            let cmd = [
                hover * (1.0 + 0.3 * (7.0 * t).sin()),
                hover * (1.0 - 0.3 * (7.0 * t).sin()),
                hover * (1.0 + 0.2 * (11.0 * t).cos()),
                hover * (1.0 - 0.2 * (11.0 * t).cos()),
            ];
            let (next, _) = dynamics_step(&truth, &cmd, Vec3::zeros(), &vehicle, GRAVITY, &pad(), dt);
            truth = next;
            let norm = truth.attitude.into_inner().norm();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn drop_onto_pad_clamps_at_pad_surface() {
        let vehicle = VehicleParams::default();
        let pad = PadParams::default();
        let mut truth = TruthState {
            position: Vec3::new(pad.center.x + 0.1, pad.center.y, pad.center.z + 0.5),
            ..TruthState::default()
        };
        let dt = 0.002;
        for _ in 0..1000 {
            let (next, _) = dynamics_step(&truth, &[0.0; 4], Vec3::zeros(), &vehicle, GRAVITY, &pad, dt);
            truth = next;
        }
        assert!((truth.position.z - pad.center.z).abs() < 1e-12);
        assert!(truth.velocity.norm() < 1e-6);
    }
}
