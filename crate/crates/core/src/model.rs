//! Model parameters, the regime map over the `(ρ, a)` plane, the limiting
//! optimizer location `t*`, and horizon rescaling.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Default tolerance for treating `ρ = A_a` (a measure-zero boundary) as equality.
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-12;

/// `(ρ, a, c₁, c₂)`: correlation, barrier ratio of the second portfolio, and
/// the two premium (drift) rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rho: f64,
    pub a: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ModelParams {
    pub fn new(rho: f64, a: f64, c1: f64, c2: f64) -> Result<Self> {
        let p = ModelParams { rho, a, c1, c2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return domain(format!("rho must lie in (-1,1), got {}", self.rho));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return domain(format!("a must lie in (0,1], got {}", self.a));
        }
        if !(self.c1.is_finite() && self.c2.is_finite()) {
            return domain("drifts must be finite");
        }
        Ok(())
    }

    /// `√(1 − ρ²)`, the loading of the independent driver in `W₂`.
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }
}

/// Scaled sojourn budgets `(S₁, S₂)`; the concrete budgets at capital `u`
/// are `H(u) = (S₁/u², S₂/u²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournBudget {
    pub s1: f64,
    pub s2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
}

impl SojournBudget {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s1 >= 0.0 && s2 >= 0.0 && s1.is_finite() && s2.is_finite()) {
            return domain(format!("sojourn budgets must be finite and >= 0, got ({s1}, {s2})"));
        }
        Ok(SojournBudget { s1, s2, u: None })
    }

    pub fn zero() -> Self {
        SojournBudget { s1: 0.0, s2: 0.0, u: None }
    }

    pub fn at(self, u: f64) -> Result<Self> {
        if !(u > 0.0 && u.is_finite()) {
            return domain(format!("capital level must be positive, got {u}"));
        }
        Ok(SojournBudget { u: Some(u), ..self })
    }

    /// `H(u) = (S₁/u², S₂/u²)`.
    pub fn scaled(&self) -> Result<(f64, f64)> {
        let u = self
            .u
            .ok_or_else(|| Error::Config("sojourn budget has no capital level attached".into()))?;
        Ok((self.s1 / (u * u), self.s2 / (u * u)))
    }

    /// Whether both scaled budgets fit inside a horizon of length 1.
    pub fn is_nonvacuous(&self) -> bool {
        matches!(self.scaled(), Ok((h1, h2)) if h1 < 1.0 && h2 < 1.0)
    }
}

/// The asymptotic regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeKind {
    /// `a ≤ ρ`: the first coordinate dominates.
    DimReduction,
    /// `ρ > A_a`.
    Case1Supercritical,
    /// `ρ = A_a`, `a < 1`.
    Case2CriticalAlt1,
    /// `ρ = A_a = −1/2`, `a = 1`.
    Case3CriticalA1,
    /// `ρ < A_a`, `a < 1`.
    Case4SubcriticalAlt1,
    /// `ρ < A_a`, `a = 1`.
    Case5SubcriticalA1,
}

impl RegimeKind {
    /// Case number of the two-dimensional limit; `None` for dimension reduction.
    pub fn case_number(self) -> Option<u8> {
        match self {
            RegimeKind::DimReduction => None,
            RegimeKind::Case1Supercritical => Some(1),
            RegimeKind::Case2CriticalAlt1 => Some(2),
            RegimeKind::Case3CriticalA1 => Some(3),
            RegimeKind::Case4SubcriticalAlt1 => Some(4),
            RegimeKind::Case5SubcriticalA1 => Some(5),
        }
    }

    pub fn from_case_number(n: u8) -> Result<Self> {
        Ok(match n {
            0 => RegimeKind::DimReduction,
            1 => RegimeKind::Case1Supercritical,
            2 => RegimeKind::Case2CriticalAlt1,
            3 => RegimeKind::Case3CriticalA1,
            4 => RegimeKind::Case4SubcriticalAlt1,
            5 => RegimeKind::Case5SubcriticalA1,
            _ => return Err(Error::Config(format!("no regime case {n} (expected 0..=5)"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::DimReduction => "DimReduction",
            RegimeKind::Case1Supercritical => "Case1_Supercritical",
            RegimeKind::Case2CriticalAlt1 => "Case2_CriticalAlt1",
            RegimeKind::Case3CriticalA1 => "Case3_CriticalA1",
            RegimeKind::Case4SubcriticalAlt1 => "Case4_SubcriticalAlt1",
            RegimeKind::Case5SubcriticalA1 => "Case5_SubcriticalA1",
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A classified parameter point: regime, boundary value `A_a`, the limiting
/// optimizer `t*` and the limiting minimizer(s) of the rate function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub boundary: f64,
    pub t_star: f64,
    pub minimizers: Vec<(f64, f64)>,
}

/// Critical correlation `A_a = (1 − √(8a² + 1)) / (4a)`.
pub fn regime_boundary(a: f64) -> Result<f64> {
    if !(a > 0.0 && a <= 1.0) {
        return domain(format!("a must lie in (0,1], got {a}"));
    }
    // Rationalized form (-2a / (1 + √(8a²+1))) keeps full precision as a → 0.
    Ok(-2.0 * a / (1.0 + (8.0 * a * a + 1.0).sqrt()))
}

fn is_unit(a: f64, tol: f64) -> bool {
    a >= 1.0 - tol
}

/// Classify `params`; `|ρ − A_a| ≤ tol` counts as being on the boundary.
pub fn classify(params: &ModelParams, tol: f64) -> Result<Regime> {
    params.validate()?;
    if !(tol >= 0.0) {
        return domain(format!("tolerance must be >= 0, got {tol}"));
    }
    let boundary = regime_boundary(params.a)?;
    let kind = if params.a <= params.rho {
        RegimeKind::DimReduction
    } else if params.rho > boundary + tol {
        RegimeKind::Case1Supercritical
    } else if params.rho >= boundary - tol {
        if is_unit(params.a, tol) {
            RegimeKind::Case3CriticalA1
        } else {
            RegimeKind::Case2CriticalAlt1
        }
    } else if is_unit(params.a, tol) {
        RegimeKind::Case5SubcriticalA1
    } else {
        RegimeKind::Case4SubcriticalAlt1
    };
    build_regime(params, kind, boundary)
}

/// Build the regime record for an explicitly chosen case, bypassing the
/// boundary comparison. Used to reach the equality cases deliberately.
pub fn force_regime(params: &ModelParams, kind: RegimeKind) -> Result<Regime> {
    params.validate()?;
    let boundary = regime_boundary(params.a)?;
    build_regime(params, kind, boundary)
}

fn build_regime(params: &ModelParams, kind: RegimeKind, boundary: f64) -> Result<Regime> {
    let t = t_star(params, kind)?;
    let minimizers = match kind {
        RegimeKind::Case5SubcriticalA1 => vec![(1.0, t), (t, 1.0)],
        _ => vec![(1.0, t)],
    };
    Ok(Regime { kind, boundary, t_star: t, minimizers })
}

/// Limit of the time coordinate of the rate minimizer.
pub fn t_star(params: &ModelParams, kind: RegimeKind) -> Result<f64> {
    let (rho, a) = (params.rho, params.a);
    let t = match kind {
        RegimeKind::DimReduction
        | RegimeKind::Case1Supercritical
        | RegimeKind::Case2CriticalAlt1
        | RegimeKind::Case3CriticalA1 => 1.0,
        RegimeKind::Case4SubcriticalAlt1 => a / (rho * (2.0 * a * rho - 1.0)),
        RegimeKind::Case5SubcriticalA1 => 1.0 / (rho * (2.0 * rho - 1.0)),
    };
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Logic(format!(
            "t* = {t} outside (0,1] for {kind} at rho={rho}, a={a}"
        )));
    }
    Ok(t)
}

/// Result of mapping a horizon-`T` problem onto the unit horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescaled {
    pub c: f64,
    pub u: f64,
    /// The drift obtained from the substitution `c/√T` (kept for comparison;
    /// it does not preserve the ruin probability).
    pub c_alt: f64,
}

/// Map `(c, u)` on horizon `T` to `(c√T, u/√T)` on horizon 1.
pub fn rescale_horizon(c: f64, u: f64, horizon: f64) -> Result<Rescaled> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    let r = horizon.sqrt();
    Ok(Rescaled { c: c * r, u: u / r, c_alt: c / r })
}

#[derive(Serialize)]
struct RegimeRecord<'a> {
    rho: f64,
    a: f64,
    c1: f64,
    c2: f64,
    regime: &'a str,
    #[serde(rename = "A_a")]
    boundary: f64,
    t_star: f64,
    minimizers: &'a [(f64, f64)],
}

/// JSON record with keys `rho, a, c1, c2, regime, A_a, t_star, minimizers`.
pub fn regime_record(params: &ModelParams, regime: &Regime) -> serde_json::Value {
    serde_json::to_value(RegimeRecord {
        rho: params.rho,
        a: params.a,
        c1: params.c1,
        c2: params.c2,
        regime: regime.kind.name(),
        boundary: regime.boundary,
        t_star: regime.t_star,
        minimizers: &regime.minimizers,
    })
    .expect("regime record serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::one_dim_ruin;

    fn p(rho: f64, a: f64) -> ModelParams {
        ModelParams::new(rho, a, 0.0, 0.0).unwrap()
    }

    #[test]
    fn boundary_values() {
        assert_eq!(regime_boundary(1.0).unwrap(), -0.5);
        let b = regime_boundary(0.5).unwrap();
        assert!((b - (1.0 - 3f64.sqrt()) / 2.0).abs() < 1e-15);
        let b = regime_boundary(1e-3).unwrap();
        assert!((b + 0.000_999_998_000_009).abs() < 1e-15);
        assert!(regime_boundary(0.0).is_err());
        assert!(regime_boundary(1.5).is_err());
        for i in 1..=10 {
            let b = regime_boundary(i as f64 / 10.0).unwrap();
            assert!(b > -1.0 && b < 0.0);
        }
    }

    #[test]
    fn classify_examples() {
        let tol = DEFAULT_BOUNDARY_TOL;
        assert_eq!(classify(&p(0.5, 0.3), tol).unwrap().kind, RegimeKind::DimReduction);
        assert_eq!(classify(&p(-0.5, 1.0), tol).unwrap().kind, RegimeKind::Case3CriticalA1);
        assert_eq!(classify(&p(-0.8, 1.0), tol).unwrap().kind, RegimeKind::Case5SubcriticalA1);
        assert_eq!(classify(&p(0.9, 1.0), tol).unwrap().kind, RegimeKind::Case1Supercritical);
        let a = 0.5;
        let on = classify(&p(regime_boundary(a).unwrap(), a), tol).unwrap();
        assert_eq!(on.kind, RegimeKind::Case2CriticalAlt1);
        assert_eq!(classify(&p(-0.6, 0.9), tol).unwrap().kind, RegimeKind::Case4SubcriticalAlt1);
        // a = ρ is dimension reduction
        assert_eq!(classify(&p(0.4, 0.4), tol).unwrap().kind, RegimeKind::DimReduction);
    }

    #[test]
    fn classify_tolerance_widens_boundary() {
        let params = p(-0.5 + 1e-6, 1.0);
        assert_eq!(classify(&params, 1e-12).unwrap().kind, RegimeKind::Case1Supercritical);
        assert_eq!(classify(&params, 1e-5).unwrap().kind, RegimeKind::Case3CriticalA1);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(1.0, 0.5, 0.0, 0.0).is_err());
        assert!(ModelParams::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(ModelParams::new(0.0, 1.2, 0.0, 0.0).is_err());
        assert!(classify(&p(0.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn t_star_examples() {
        let t = t_star(&p(0.9, 1.0), RegimeKind::Case1Supercritical).unwrap();
        assert_eq!(t, 1.0);
        let t = t_star(&p(-0.6, 0.9), RegimeKind::Case4SubcriticalAlt1).unwrap();
        assert!((t - 0.721_153_846_153_846_2).abs() < 1e-12);
        let t = t_star(&p(-0.8, 1.0), RegimeKind::Case5SubcriticalA1).unwrap();
        assert!((t - 0.480_769_230_769_230_7).abs() < 1e-12);
        // forcing a case that does not fit the parameters is caught
        let err = t_star(&p(0.3, 0.9), RegimeKind::Case4SubcriticalAlt1).unwrap_err();
        assert!(err.is_logic());
    }

    #[test]
    fn t_star_sweep_strictly_inside() {
        for i in 1..20 {
            let a = i as f64 / 20.0;
            let b = regime_boundary(a).unwrap();
            for j in 1..20 {
                let rho = -1.0 + (b + 1.0) * j as f64 / 20.0;
                let r = classify(&p(rho, a), DEFAULT_BOUNDARY_TOL).unwrap();
                assert_eq!(r.kind, RegimeKind::Case4SubcriticalAlt1);
                assert!(r.t_star < 1.0 && r.t_star > 0.0, "a={a} rho={rho}");
            }
        }
        for j in 1..50 {
            let rho = -1.0 + 0.5 * j as f64 / 50.0;
            let r = classify(&p(rho, 1.0), DEFAULT_BOUNDARY_TOL).unwrap();
            assert_eq!(r.kind, RegimeKind::Case5SubcriticalA1);
            assert!(r.t_star < 1.0);
            assert_eq!(r.minimizers, vec![(1.0, r.t_star), (r.t_star, 1.0)]);
        }
    }

    #[test]
    fn rescale_examples_against_exact_formula() {
        let r = rescale_horizon(2.0, 3.0, 4.0).unwrap();
        assert_eq!((r.c, r.u), (4.0, 1.5));
        assert_eq!(r.c_alt, 1.0);
        let lhs = one_dim_ruin(2.0, 3.0, 4.0).unwrap();
        let rhs = one_dim_ruin(r.c, r.u, 1.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
        // the c/√T variant does not preserve the probability
        let alt = one_dim_ruin(r.c_alt, r.u, 1.0).unwrap();
        assert!((alt - lhs).abs() > 1e-3);

        let r = rescale_horizon(0.7, 1.3, 1.0).unwrap();
        assert_eq!((r.c, r.u), (0.7, 1.3));

        let r = rescale_horizon(0.0, 1.0, 4.0).unwrap();
        assert_eq!((r.c, r.u), (0.0, 0.5));
        let two_psi = 2.0 * crate::gauss::sf(0.5);
        assert!((one_dim_ruin(0.0, 1.0, 4.0).unwrap() - two_psi).abs() < 1e-15);
        assert!((one_dim_ruin(0.0, 0.5, 1.0).unwrap() - two_psi).abs() < 1e-15);

        assert!(rescale_horizon(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn rescale_round_trip() {
        for &(c, u, t) in &[(0.3, 1.7, 2.5), (-1.2, 0.4, 0.01), (5.0, 9.0, 123.0)] {
            let r = rescale_horizon(c, u, t).unwrap();
            let back = rescale_horizon(r.c, r.u, 1.0 / t).unwrap();
            assert!((back.c - c).abs() <= 1e-14 * c.abs().max(1.0));
            assert!((back.u - u).abs() <= 1e-14 * u.abs().max(1.0));
        }
    }

    #[test]
    fn regime_json_keys() {
        let params = p(-0.5, 1.0);
        let r = classify(&params, DEFAULT_BOUNDARY_TOL).unwrap();
        let v = regime_record(&params, &r);
        for key in ["rho", "a", "c1", "c2", "regime", "A_a", "t_star", "minimizers"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["regime"], "Case3_CriticalA1");
        assert_eq!(v["A_a"], -0.5);
    }

    #[test]
    fn budget_scaling() {
        let b = SojournBudget::new(1.0, 2.0).unwrap().at(2.0).unwrap();
        assert_eq!(b.scaled().unwrap(), (0.25, 0.5));
        assert!(b.is_nonvacuous());
        assert!(SojournBudget::new(-1.0, 0.0).is_err());
        assert!(SojournBudget::zero().scaled().is_err());
        assert!(!SojournBudget::new(1.0, 1.0).unwrap().at(0.9).unwrap().is_nonvacuous());
    }
}
