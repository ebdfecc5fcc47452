//! Scalar and bivariate Gaussian kernels.
//!
//! `Φ` and its survival function `Ψ = 1 − Φ` are both evaluated through the
//! complementary error function, so neither tail ever goes through a `1 − x`
//! subtraction.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal distribution function `Φ(x)`.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("normal cdf argument must be finite, got {x}"));
    }
    Ok(cdf(x))
}

/// Standard normal survival function `Ψ(x) = P(N > x)`.
pub fn std_normal_sf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("normal survival argument must be finite, got {x}"));
    }
    Ok(sf(x))
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Unchecked `Φ`, for callers that already validated their input.
#[inline]
pub(crate) fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite far into the lower tail where `Φ` itself underflows.
pub(crate) fn log_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return cdf(x).ln();
    }
    // Mills ratio expansion: Φ(x) ≈ φ(x)/|x| · (1 − 1/x² + 3/x⁴ − 15/x⁶)
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Covariance matrix of `(W₁(s), W₂(t))` for the correlated pair
/// `W₂ = ρB₁ + √(1−ρ²)B₂`:
///
/// ```text
/// [ s            ρ·min(s,t) ]
/// [ ρ·min(s,t)   t          ]
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivCovariance {
    s: f64,
    t: f64,
    rho: f64,
}

impl BivCovariance {
    pub fn new(s: f64, t: f64, rho: f64) -> Result<Self> {
        if !(s.is_finite() && t.is_finite() && s > 0.0 && t > 0.0) {
            return domain(format!("covariance times must be positive, got s={s}, t={t}"));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return domain(format!("correlation must lie in (-1,1), got {rho}"));
        }
        let cov = BivCovariance { s, t, rho };
        if cov.det() <= 0.0 {
            return domain(format!("degenerate covariance at s={s}, t={t}, rho={rho}"));
        }
        Ok(cov)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Off-diagonal entry `ρ·min(s,t)`.
    pub fn cross(&self) -> f64 {
        self.rho * self.s.min(self.t)
    }

    pub fn det(&self) -> f64 {
        let m = self.s.min(self.t);
        self.s * self.t - self.rho * self.rho * m * m
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        let c = self.cross();
        [[self.s, c], [c, self.t]]
    }

    /// `Σ⁻¹ v`.
    pub fn solve(&self, v: [f64; 2]) -> [f64; 2] {
        let c = self.cross();
        let det = self.det();
        [(self.t * v[0] - c * v[1]) / det, (self.s * v[1] - c * v[0]) / det]
    }

    /// `vᵀ Σ⁻¹ v`.
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        let c = self.cross();
        (self.t * v[0] * v[0] - 2.0 * c * v[0] * v[1] + self.s * v[1] * v[1]) / self.det()
    }
}

/// Centered bivariate normal density with covariance `cov` at `(x, y)`.
pub fn biv_density(cov: &BivCovariance, x: f64, y: f64) -> Result<f64> {
    let det = cov.det();
    if det <= 0.0 {
        return domain(format!("degenerate covariance (det = {det})"));
    }
    Ok((-0.5 * cov.quad([x, y])).exp() / (2.0 * PI * det.sqrt()))
}
