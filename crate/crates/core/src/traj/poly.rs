//! Fully-constrained boundary polynomials for trajectory segments.
//!
//! Segments store one polynomial per axis in normalized time
//! `tau = t / duration`, which keeps the interpolation problem's conditioning
//! independent of segment duration. Derivatives with respect to real time are
//! obtained by scaling the tau-derivatives with `duration^-order`.
//!
//! Representation: a quartic Taylor head `sum c_d tau^d` carrying the start
//! conditions plus a tail in the basis `tau^5 (tau - 1)^j`, `j = 0..5`,
//! carrying the end conditions. Every tail member vanishes through fourth
//! order at `tau = 0`, and at `tau = 1` the tail system is triangular with
//! small integer entries, so construction is a forward substitution and
//! boundary evaluation never cancels through huge monomial coefficients. The
//! equivalent degree-9 monomial coefficients are available for inspection.

use crate::Real;

/// Number of boundary derivatives pinned at each end (value .. snap).
pub const BOUNDARY_DERIVS: usize = 5;
/// Coefficient count of a fully-constrained interpolant.
pub const TRANSFER_COEFFS: usize = 2 * BOUNDARY_DERIVS;

/// `k (k-1) ... (k-order+1)` as a scalar; 1 for order = 0, 0 once exhausted.
fn falling<T: Real>(k: usize, order: usize) -> T {
    if order > k {
        return T::zero();
    }
    let mut f = 1.0f64;
    for i in 0..order {
        f *= (k - i) as f64;
    }
    T::from_f64c(f)
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut b = 1.0f64;
    for i in 0..k {
        b = b * (n - i) as f64 / (i + 1) as f64;
    }
    b
}

/// Degree-9 polynomial on `tau in [0, 1]` in two-point form.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPoly<T: Real> {
    /// Monomial coefficients of the quartic Taylor head at `tau = 0`.
    head: [T; BOUNDARY_DERIVS],
    /// Coefficients of the tail basis `tau^5 (tau - 1)^j`.
    tail: [T; BOUNDARY_DERIVS],
}

impl<T: Real> SegmentPoly<T> {
    pub fn constant(v: T) -> Self {
        let mut head = [T::zero(); BOUNDARY_DERIVS];
        head[0] = v;
        Self {
            head,
            tail: [T::zero(); BOUNDARY_DERIVS],
        }
    }

    pub fn linear(v0: T, slope: T) -> Self {
        let mut p = Self::constant(v0);
        p.head[1] = slope;
        p
    }

    /// `order`-th derivative of `tau^5 (tau - 1)^j` by the Leibniz rule. All
    /// factors are small integers and powers of numbers in `[-1, 1]`.
    fn basis_deriv(tau: T, j: usize, order: usize) -> T {
        let shifted = tau - T::one();
        let mut acc = T::zero();
        for i in 0..=order.min(BOUNDARY_DERIVS) {
            if order - i > j {
                continue;
            }
            let scale = T::from_f64c(binomial(order, i))
                * falling::<T>(BOUNDARY_DERIVS, i)
                * falling::<T>(j, order - i);
            let mut term = scale;
            for _ in 0..BOUNDARY_DERIVS - i {
                term *= tau;
            }
            for _ in 0..j - (order - i) {
                term *= shifted;
            }
            acc += term;
        }
        acc
    }

    /// Value of the `order`-th tau-derivative at `tau`.
    pub fn eval_deriv(&self, tau: T, order: usize) -> T {
        // Horner over the head's derivative polynomial, highest power first.
        let mut acc = T::zero();
        for k in (order..BOUNDARY_DERIVS).rev() {
            acc = acc * tau + self.head[k] * falling::<T>(k, order);
        }
        for (j, &dj) in self.tail.iter().enumerate() {
            acc += dj * Self::basis_deriv(tau, j, order);
        }
        acc
    }

    /// Derivatives 0..=4 at `tau`.
    pub fn eval_derivs(&self, tau: T) -> [T; BOUNDARY_DERIVS] {
        let mut out = [T::zero(); BOUNDARY_DERIVS];
        for (d, slot) in out.iter_mut().enumerate() {
            *slot = self.eval_deriv(tau, d);
        }
        out
    }

    /// Equivalent monomial coefficients (`tau^k`, k = 0..9).
    ///
    /// The expansion multiplies by small integers only, so integer-valued
    /// two-point forms convert exactly.
    pub fn monomial_coeffs(&self) -> [T; TRANSFER_COEFFS] {
        let mut out = [T::zero(); TRANSFER_COEFFS];
        out[..BOUNDARY_DERIVS].copy_from_slice(&self.head);
        for (j, &dj) in self.tail.iter().enumerate() {
            for i in 0..=j {
                let sign = if (j - i) % 2 == 0 { 1.0 } else { -1.0 };
                out[BOUNDARY_DERIVS + i] += dj * T::from_f64c(sign * binomial(j, i));
            }
        }
        out
    }
}

/// Degree-9 interpolant matching value, velocity, acceleration, jerk and snap
/// at both ends of a segment of length `duration`.
///
/// `start` and `end` hold the boundary derivatives in real-time units; the
/// returned polynomial is in normalized time `tau = t / duration`. The head
/// follows directly from the Taylor expansion at `tau = 0`; the tail solves
/// the `tau = 1` conditions by forward substitution (the tail basis is
/// triangular there), so integer-valued boundary problems reproduce integer
/// coefficients exactly and residuals stay at machine precision.
pub fn boundary_interpolant<T: Real>(
    start: &[T; BOUNDARY_DERIVS],
    end: &[T; BOUNDARY_DERIVS],
    duration: T,
) -> SegmentPoly<T> {
    // Scale boundary derivative d by duration^d to move into tau units.
    let mut tpow = [T::one(); BOUNDARY_DERIVS];
    for d in 1..BOUNDARY_DERIVS {
        tpow[d] = tpow[d - 1] * duration;
    }

    let mut head = [T::zero(); BOUNDARY_DERIVS];
    let mut inv_fact = T::one();
    for (d, c) in head.iter_mut().enumerate() {
        if d > 0 {
            inv_fact /= T::from_f64c(d as f64);
        }
        *c = start[d] * tpow[d] * inv_fact;
    }

    // d-th derivative of tau^5 (tau - 1)^j at tau = 1: only the term that
    // differentiates (tau - 1)^j exactly j times survives.
    let diag = |d: usize, j: usize| -> T {
        falling::<T>(d, j) * falling::<T>(BOUNDARY_DERIVS, d - j)
    };

    let mut tail = [T::zero(); BOUNDARY_DERIVS];
    for d in 0..BOUNDARY_DERIVS {
        let mut t_d = end[d] * tpow[d];
        for (k, &c) in head.iter().enumerate().skip(d) {
            t_d -= c * falling::<T>(k, d);
        }
        for (j, &t_j) in tail.iter().enumerate().take(d) {
            t_d -= t_j * diag(d, j);
        }
        tail[d] = t_d / diag(d, d);
    }

    SegmentPoly { head, tail }
}
