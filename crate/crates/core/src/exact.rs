//! Closed-form one-dimensional quantities.

use std::f64::consts::PI;

use crate::error::{domain, Result};
use crate::gauss::{cdf, log_cdf};

/// `P(sup_{t∈[0,T]} (B(t) − c·t) > u)`
/// `= Φ(−u/√T − c√T) + e^{−2cu} Φ(−u/√T + c√T)`.
pub fn one_dim_ruin(c: f64, u: f64, horizon: f64) -> Result<f64> {
    if !(c.is_finite() && u.is_finite()) {
        return domain("drift and capital must be finite");
    }
    if u < 0.0 {
        return domain(format!("capital must be >= 0, got {u}"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    let r = horizon.sqrt();
    let first = cdf(-u / r - c * r);
    // e^{-2cu} can overflow for c < 0 while Φ underflows; combine in log space.
    let second = (-2.0 * c * u + log_cdf(-u / r + c * r)).exp();
    Ok((first + second).clamp(0.0, 1.0))
}

/// The closed form `(2+S)Φ(√(S/2)) − √(S/π)·e^{−S/4}`, evaluated as written.
///
/// It equals 1 at `S = 0` and increases with `S`; the integral it is meant to
/// represent, `∫ e^x P(∫₀^∞ 1(B(t)−t > x) dt > S) dx`, equals 2 at `S = 0`
/// and decreases with `S`. See [`crate::asymptotics::discrepancy_report`].
pub fn printed_sojourn_constant(s: f64) -> Result<f64> {
    if !(s >= 0.0 && s.is_finite()) {
        return domain(format!("budget must be finite and >= 0, got {s}"));
    }
    Ok((2.0 + s) * cdf((s / 2.0).sqrt()) - (s / PI).sqrt() * (-s / 4.0).exp())
}
