//! Limits of the conditional sojourn-given-ruin probability as `u → ∞`.
//!
//! With `a ≤ ρ` the limit depends on the first budget only and is
//! `∫e^x P(∫₀^∞ 1(B(t)−t > x)dt > S₁)dx` normalized by its value at `S₁ = 0`.
//! Otherwise it is a regime-dependent combination of `P̂`, `Ĥ` and `R̂`.
//! [`ConstantSpec`] values are built here, from the regime, so weights can
//! never be paired with the wrong case.

use serde::{Deserialize, Serialize};

use crate::constants::{
    estimate_budget_ratio, estimate_budgets, lambda_table, ConstantKind, ConstantSpec, PathOptions, WindowOptions,
};
use crate::error::{Error, Result};
use crate::estimate::{EstimatorResult, Sampling};
use crate::exact::printed_sojourn_constant;
use crate::gauss::cdf;
use crate::model::{ModelParams, Regime, RegimeKind, SojournBudget};

/// How the dimension-reduction limit is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitMode {
    /// The closed form `((2+S)Φ(√(S/2)) − √(S/π)e^{−S/4})/2`, as written.
    Printed,
    /// The integral representation `P̂(1,1,S)/P̂(1,1,0)`, estimated.
    Oracle,
}

impl std::str::FromStr for LimitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(LimitMode::Printed),
            "oracle" => Ok(LimitMode::Oracle),
            _ => Err(Error::Config(format!("unknown mode {s:?}; expected printed or oracle"))),
        }
    }
}

/// Discretization and sampling used when constants are estimated on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub paths: PathOptions,
    pub windows: WindowOptions,
    pub sampling: Sampling,
}

impl EvalOptions {
    pub fn new(sampling: Sampling) -> Self {
        EvalOptions { paths: PathOptions::default(), windows: WindowOptions::default(), sampling }
    }
}

/// A constant estimate labelled with its [`ConstantSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEntry {
    pub spec: ConstantSpec,
    pub result: EstimatorResult,
}

/// A ratio `C(S)/C(0)` estimated on common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub numerator: ConstantSpec,
    pub denominator: ConstantSpec,
    pub result: EstimatorResult,
}

/// Constant estimates available to [`limit_theorem22`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantTable {
    pub entries: Vec<ConstantEntry>,
    pub ratios: Vec<RatioEntry>,
}

impl ConstantTable {
    pub fn insert(&mut self, spec: ConstantSpec, result: EstimatorResult) {
        self.entries.retain(|e| e.spec != spec);
        self.entries.push(ConstantEntry { spec, result });
    }

    pub fn get(&self, spec: &ConstantSpec) -> Result<&EstimatorResult> {
        self.entries
            .iter()
            .find(|e| e.spec == *spec)
            .map(|e| &e.result)
            .ok_or_else(|| Error::Config(format!("missing constant estimate for {spec:?}")))
    }

    fn ratio(&self, num: &ConstantSpec, den: &ConstantSpec) -> Option<&EstimatorResult> {
        self.ratios.iter().find(|r| r.numerator == *num && r.denominator == *den).map(|r| &r.result)
    }
}

/// Evaluated limit with propagated Monte Carlo error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitResult {
    pub regime: RegimeKind,
    pub value: f64,
    pub stderr: f64,
    pub constants_used: Vec<ConstantEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratios_used: Vec<RatioEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// The dimension-reduction closed form, halved, as written.
pub fn limit_theorem21_printed(s1: f64) -> Result<f64> {
    Ok(printed_sojourn_constant(s1)? / 2.0)
}

/// The dimension-reduction limit for budget `s1`.
pub fn limit_theorem21(s1: f64, mode: LimitMode, opts: &EvalOptions) -> Result<LimitResult> {
    match mode {
        LimitMode::Printed => Ok(LimitResult {
            regime: RegimeKind::DimReduction,
            value: limit_theorem21_printed(s1)?,
            stderr: 0.0,
            constants_used: Vec::new(),
            ratios_used: Vec::new(),
            warnings: Vec::new(),
        }),
        LimitMode::Oracle => {
            let spec = ConstantSpec::p(1.0, 1.0, s1)?;
            // Same discretization for numerator and denominator so the grid
            // bias largely cancels.
            let paths = PathOptions { bridge: false, ..opts.paths };
            let r = estimate_budget_ratio(&spec, &paths, &opts.sampling)?;
            let denominator = ConstantSpec::p(1.0, 1.0, 0.0)?;
            let mut warnings = r.ratio.warnings.clone();
            if !r.ratio.is_valid() {
                warnings.push("exponent clamp hit; the oracle ratio is invalid".into());
            }
            Ok(LimitResult {
                regime: RegimeKind::DimReduction,
                value: r.ratio.estimate,
                stderr: r.ratio.stderr,
                constants_used: vec![
                    ConstantEntry { spec, result: r.numerator },
                    ConstantEntry { spec: denominator, result: r.denominator },
                ],
                ratios_used: vec![RatioEntry { numerator: spec, denominator, result: r.ratio }],
                warnings,
            })
        }
    }
}

/// Which of the four printed `c₁/c₂` regions of the critical unit-ratio case
/// applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case3Region {
    /// `c₂ > max(−c₁/2, −2c₁)`
    Upper,
    /// `−c₁/2 < c₂ ≤ −2c₁`
    FirstOnly,
    /// `−2c₁ < c₂ ≤ −c₁/2`
    SecondOnly,
    /// `c₂ ≤ min(−c₁/2, −2c₁)`
    Lower,
}

/// The drift factors of the critical unit-ratio case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case3Factors {
    pub region: Case3Region,
    /// `C′₃,₁`
    pub weight1: f64,
    /// `C′₃,₂`
    pub weight2: f64,
    /// `C₃`
    pub normalizer: f64,
}

fn drift_factor(x: f64, y: f64) -> f64 {
    // e^{−2(x/2 + y)²/3} Φ(y + x/2)
    let m = 0.5 * x + y;
    (-2.0 * m * m / 3.0).exp() * cdf(m)
}

/// `C′₃,₁`, `C′₃,₂` and `C₃` exactly as their piecewise definitions read.
pub fn case3_factors(c1: f64, c2: f64) -> Case3Factors {
    let e1 = drift_factor(c1, c2);
    let e2 = drift_factor(c2, c1);
    let weight1 = if -0.5 * c1 < c2 { e1 } else { 1.0 };
    let weight2 = if -0.5 * c2 < c1 { e2 } else { 1.0 };
    let (region, normalizer) = if c2 > (-0.5 * c1).max(-2.0 * c1) {
        (Case3Region::Upper, e1 + e2)
    } else if -0.5 * c1 < c2 && c2 <= -2.0 * c1 {
        (Case3Region::FirstOnly, e1 + 0.5)
    } else if -2.0 * c1 < c2 && c2 <= -0.5 * c1 {
        (Case3Region::SecondOnly, 0.5 + e2)
    } else {
        (Case3Region::Lower, 1.0)
    };
    Case3Factors { region, weight1, weight2, normalizer }
}

/// Values on both sides of one region boundary of [`case3_factors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub boundary: String,
    pub c1: f64,
    pub c2: f64,
    pub below: Case3Factors,
    pub above: Case3Factors,
    /// Jump of `(C′₃,₁ + C′₃,₂)/C₃`, the zero-budget value of the limit when
    /// both sojourn constants coincide.
    pub normalization_jump: f64,
}

/// Evaluate the piecewise factors just below and just above `c₂ = −2c₁` and
/// `c₂ = −c₁/2` and record the jumps. Whether the pieces join continuously
/// is not asserted; this only measures it.
pub fn case3_jump_report(c1: f64, eps: f64) -> Vec<JumpRecord> {
    let norm = |f: &Case3Factors| (f.weight1 + f.weight2) / f.normalizer;
    [("c2 = -2 c1", -2.0 * c1), ("c2 = -c1/2", -0.5 * c1)]
        .into_iter()
        .map(|(name, c2)| {
            let below = case3_factors(c1, c2 - eps);
            let above = case3_factors(c1, c2 + eps);
            JumpRecord {
                boundary: name.to_string(),
                c1,
                c2,
                normalization_jump: norm(&above) - norm(&below),
                below,
                above,
            }
        })
        .collect()
}

/// The constants a regime's limit needs, in a fixed order.
///
/// Case (i): `R̂(S₁,S₂)`, `R̂(0,0)`. Case (ii): `P̂(w,w,S₁)`, `Ĥ(a,2a,S₂)` with
/// `w = (1−aρ)/(1−ρ²)`. Case (iii): `P̂(2,2,S₁)`, `Ĥ(1,2,S₂)`, `P̂(2,2,S₂)`,
/// `Ĥ(1,2,S₁)`. Cases (iv)/(v): `P̂(λ₁,λ₁,·)`, `Ĥ(d₂,2d₂,·)` from the
/// earlier-crossing weight table, with the budgets exchanged in case (v)
/// when `c₁ > c₂`.
pub fn required_constants(params: &ModelParams, regime: &Regime, budget: &SojournBudget) -> Result<Vec<ConstantSpec>> {
    let (s1, s2) = (budget.s1, budget.s2);
    let (rho, a) = (params.rho, params.a);
    Ok(match regime.kind {
        RegimeKind::DimReduction => vec![ConstantSpec::p(1.0, 1.0, s1)?, ConstantSpec::p(1.0, 1.0, 0.0)?],
        RegimeKind::Case1Supercritical => vec![ConstantSpec::r(rho, a, s1, s2)?, ConstantSpec::r(rho, a, 0.0, 0.0)?],
        RegimeKind::Case2CriticalAlt1 => {
            let w = (1.0 - a * rho) / (1.0 - rho * rho);
            vec![ConstantSpec::p(w, w, s1)?, ConstantSpec::h(a, 2.0 * a, s2)?]
        }
        RegimeKind::Case3CriticalA1 => vec![
            ConstantSpec::p(2.0, 2.0, s1)?,
            ConstantSpec::h(1.0, 2.0, s2)?,
            ConstantSpec::p(2.0, 2.0, s2)?,
            ConstantSpec::h(1.0, 2.0, s1)?,
        ],
        RegimeKind::Case4SubcriticalAlt1 | RegimeKind::Case5SubcriticalA1 => {
            let t = lambda_table(regime, params)?;
            let (sp, sh) = if regime.kind == RegimeKind::Case5SubcriticalA1 && params.c1 > params.c2 {
                (s2, s1)
            } else {
                (s1, s2)
            };
            vec![
                ConstantSpec::p(t.drift1, t.drift1, sp)?,
                ConstantSpec::h(t.drift2, 2.0 * t.drift2, sh)?,
            ]
        }
    })
}

/// Relative standard error of a product or quotient of independent factors.
fn rel_err(parts: &[&EstimatorResult]) -> f64 {
    parts.iter().map(|r| (r.stderr / r.estimate).powi(2)).sum::<f64>().sqrt()
}

/// Evaluate the two-dimensional limit from supplied constant estimates.
///
/// Standard errors treat distinct constants as independent; in case (i) a
/// common-random-number ratio entry is used when the table has one.
pub fn limit_theorem22(
    params: &ModelParams,
    regime: &Regime,
    budget: &SojournBudget,
    table: &ConstantTable,
) -> Result<LimitResult> {
    params.validate()?;
    let specs = required_constants(params, regime, budget)?;
    let rho = params.rho;
    let mut warnings = Vec::new();
    let mut ratios_used = Vec::new();
    let (value, stderr) = match regime.kind {
        RegimeKind::DimReduction => {
            return Err(Error::Config(
                "the dimension-reduction regime is evaluated by limit_theorem21".into(),
            ))
        }
        RegimeKind::Case1Supercritical => {
            if let Some(r) = table.ratio(&specs[0], &specs[1]) {
                ratios_used.push(RatioEntry { numerator: specs[0], denominator: specs[1], result: r.clone() });
                (r.estimate, r.stderr)
            } else {
                let (num, den) = (table.get(&specs[0])?, table.get(&specs[1])?);
                let v = num.estimate / den.estimate;
                (v, v * rel_err(&[num, den]))
            }
        }
        RegimeKind::Case2CriticalAlt1 => {
            let (p, h) = (table.get(&specs[0])?, table.get(&specs[1])?);
            let a = params.a;
            let v = (1.0 - a * rho) * p.estimate * h.estimate / (2.0 * a * (1.0 - rho * rho));
            (v, v * rel_err(&[p, h]))
        }
        RegimeKind::Case3CriticalA1 => {
            let get = |i: usize| table.get(&specs[i]);
            let (p1, h2, p2, h1) = (get(0)?, get(1)?, get(2)?, get(3)?);
            let c31 = p1.estimate * h2.estimate;
            let c32 = p2.estimate * h1.estimate;
            let f = case3_factors(params.c1, params.c2);
            let v = (c31 * f.weight1 + c32 * f.weight2) / f.normalizer;
            let e31 = c31 * rel_err(&[p1, h2]) * f.weight1;
            let e32 = c32 * rel_err(&[p2, h1]) * f.weight2;
            if f.region != Case3Region::Upper {
                warnings.push(format!(
                    "drift region {:?}: the piecewise normalizer does not reduce to C'31 + C'32 here",
                    f.region
                ));
            }
            (v, (e31 * e31 + e32 * e32).sqrt() / f.normalizer)
        }
        RegimeKind::Case4SubcriticalAlt1 | RegimeKind::Case5SubcriticalA1 => {
            if !(rho < 0.0) {
                return Err(Error::Logic(format!(
                    "{} requires rho < 0 for a positive limit, got rho = {rho}",
                    regime.kind
                )));
            }
            let (p, h) = (table.get(&specs[0])?, table.get(&specs[1])?);
            let v = -p.estimate * h.estimate / (2.0 * rho);
            (v, v * rel_err(&[p, h]))
        }
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Logic(format!("limit evaluated to {value}, expected a positive number")));
    }
    let mut constants_used = Vec::new();
    for spec in &specs {
        if let Ok(r) = table.get(spec) {
            if !constants_used.iter().any(|e: &ConstantEntry| e.spec == *spec) {
                constants_used.push(ConstantEntry { spec: *spec, result: r.clone() });
                warnings.extend(r.warnings.iter().cloned());
            }
        }
    }
    Ok(LimitResult { regime: regime.kind, value, stderr, constants_used, ratios_used, warnings })
}

/// Estimate every constant a limit needs and evaluate it.
///
/// Constants with the same weights share one set of paths across budgets.
/// `R̂` always uses the grid convention (it only enters as a ratio);
/// `P̂` and `Ĥ` follow `opts`.
pub fn evaluate_limit(
    params: &ModelParams,
    regime: &Regime,
    budget: &SojournBudget,
    mode: LimitMode,
    opts: &EvalOptions,
) -> Result<LimitResult> {
    if regime.kind == RegimeKind::DimReduction {
        return limit_theorem21(budget.s1, mode, opts);
    }
    let specs = required_constants(params, regime, budget)?;
    let mut table = ConstantTable::default();
    if regime.kind == RegimeKind::Case1Supercritical {
        let paths = PathOptions { bridge: false, ..opts.paths };
        let r = estimate_budget_ratio(&specs[0], &paths, &opts.sampling)?;
        table.ratios.push(RatioEntry { numerator: specs[0], denominator: specs[1], result: r.ratio });
        table.insert(specs[0], r.numerator);
        table.insert(specs[1], r.denominator);
    } else {
        fill_table(&mut table, &specs, opts)?;
    }
    limit_theorem22(params, regime, budget, &table)
}

/// Estimate `specs` into `table`, grouping specs that differ only in budget.
pub fn fill_table(table: &mut ConstantTable, specs: &[ConstantSpec], opts: &EvalOptions) -> Result<()> {
    let mut groups: Vec<(ConstantSpec, Vec<ConstantSpec>)> = Vec::new();
    for spec in specs {
        let key = base_of(spec);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => {
                if !v.contains(spec) {
                    v.push(*spec)
                }
            }
            None => groups.push((key, vec![*spec])),
        }
    }
    for (key, members) in groups {
        let budgets: Vec<(f64, f64)> = members.iter().map(budget_of).collect();
        let paths = if key.kind() == ConstantKind::R { PathOptions { bridge: false, ..opts.paths } } else { opts.paths };
        let results = estimate_budgets(&key, &budgets, &paths, &opts.windows, &opts.sampling)?;
        for (spec, r) in members.into_iter().zip(results) {
            table.insert(spec, r);
        }
    }
    Ok(())
}

fn base_of(spec: &ConstantSpec) -> ConstantSpec {
    match *spec {
        ConstantSpec::P { w1, w2, .. } => ConstantSpec::P { w1, w2, s: 0.0 },
        ConstantSpec::H { w1, w2, .. } => ConstantSpec::H { w1, w2, s: 0.0 },
        ConstantSpec::R { rho, a, .. } => ConstantSpec::R { rho, a, s1: 0.0, s2: 0.0 },
    }
}

fn budget_of(spec: &ConstantSpec) -> (f64, f64) {
    match *spec {
        ConstantSpec::P { s, .. } | ConstantSpec::H { s, .. } => (s, 0.0),
        ConstantSpec::R { s1, s2, .. } => (s1, s2),
    }
}

/// One row of [`discrepancy_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub s: f64,
    /// The closed form `(2+S)Φ(√(S/2)) − √(S/π)e^{−S/4}`.
    pub printed: f64,
    /// Estimate of `∫e^x P(∫₀^∞ 1(B(t)−t > x)dt > S)dx`.
    pub oracle: f64,
    pub oracle_stderr: f64,
    /// `printed / oracle`.
    pub ratio: f64,
}

/// Side-by-side comparison of the closed form with the estimated integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub rows: Vec<DiscrepancyRow>,
    /// Whether the closed form increases anywhere along the grid, although
    /// the quantity it stands for cannot increase with the budget.
    pub printed_monotonicity_violated: bool,
    /// Whether the estimates are nonincreasing along the grid.
    pub oracle_nonincreasing: bool,
    pub config_hash: String,
    pub n: u64,
    pub seed: u64,
}

/// Compare the closed form with `P̂(1,1,S)` over `s_grid` (one set of paths).
pub fn discrepancy_report(s_grid: &[f64], paths: &PathOptions, sampling: &Sampling) -> Result<DiscrepancyReport> {
    if s_grid.is_empty() {
        return Err(Error::Config("empty budget grid".into()));
    }
    let estimates = crate::constants::estimate_p_multi(1.0, 1.0, s_grid, paths, sampling)?;
    let mut rows = Vec::with_capacity(s_grid.len());
    for (&s, r) in s_grid.iter().zip(&estimates) {
        let printed = printed_sojourn_constant(s)?;
        rows.push(DiscrepancyRow { s, printed, oracle: r.estimate, oracle_stderr: r.stderr, ratio: printed / r.estimate });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| rows[i].s.total_cmp(&rows[j].s));
    let printed_monotonicity_violated = order.windows(2).any(|w| rows[w[1]].printed > rows[w[0]].printed);
    let oracle_nonincreasing = order.windows(2).all(|w| rows[w[1]].oracle <= rows[w[0]].oracle);
    let config_hash = crate::estimate::config_hash(&serde_json::json!({
        "report": "discrepancy",
        "s_grid": s_grid,
        "paths": paths,
        "n": sampling.n,
        "seed": sampling.seed,
    }))?;
    Ok(DiscrepancyReport {
        rows,
        printed_monotonicity_violated,
        oracle_nonincreasing,
        config_hash,
        n: sampling.n,
        seed: sampling.seed,
    })
}
