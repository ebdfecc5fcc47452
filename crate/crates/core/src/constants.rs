//! Monte Carlo estimation of the sojourn constants `P̂`, `Ĥ` and `R̂`.
//!
//! All three rest on the occupation-quantile representation: for a path
//! whose occupation above `x` is nonincreasing in `x`,
//! `∫ 1(occupation(x) > S) e^{wx} dx = e^{wξ_S}/w`, where `ξ_S` is the
//! occupation quantile (see [`crate::paths::level_quantile`]). Each constant
//! is therefore an expectation of an exponential of occupation quantiles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{config_hash, guarded_exp, run_batches, EstimatorResult, Moments, Sampling, WindowPoint};
use crate::model::{ModelParams, Regime, RegimeKind};
use crate::paths::{bridge_sup, fill_drifted, quantiles_for_counts, required_count, PairStepper};
use crate::rng::{path_rng, StreamDomain};

/// Relative tolerance for the `w₂ = 2w₁` restriction of `Ĥ`.
const RATIO_TOL: f64 = 1e-12;

/// Horizon doublings tried by the adaptive rule before giving up.
pub const MAX_DOUBLINGS: u32 = 8;

/// The three sojourn constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstantKind {
    P,
    H,
    R,
}

/// A fully specified constant.
///
/// * `P { w1, w2, s }`: `∫ P{∫₀^∞ 1(B(t) − w₁t > x) dt > s} e^{w₂x} dx`, finite iff `2w₁ > w₂`.
/// * `H { w1, w2, s }`: `lim_Δ Δ⁻¹ ∫ P{∫₀^Δ 1(B(t) − w₁t > x) dt > s} e^{w₂x} dx`, with `w₂ = 2w₁`.
/// * `R { rho, a, s1, s2 }`: the two-dimensional constant of the correlated
///   pair `(W₁(t) − t, W₂(t) − at)` with weights `λ₁ = (1−aρ)/(1−ρ²)`,
///   `λ₂ = (a−ρ)/(1−ρ²)`; requires `a > max(0, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ConstantSpec {
    P { w1: f64, w2: f64, s: f64 },
    H { w1: f64, w2: f64, s: f64 },
    R { rho: f64, a: f64, s1: f64, s2: f64 },
}

fn check_budget(s: f64) -> Result<()> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("budget must be finite and >= 0, got {s}")));
    }
    Ok(())
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::Domain(format!("{name} must be positive, got {w}")));
    }
    Ok(())
}

impl ConstantSpec {
    pub fn p(w1: f64, w2: f64, s: f64) -> Result<Self> {
        let spec = ConstantSpec::P { w1, w2, s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn h(w1: f64, w2: f64, s: f64) -> Result<Self> {
        let spec = ConstantSpec::H { w1, w2, s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn r(rho: f64, a: f64, s1: f64, s2: f64) -> Result<Self> {
        let spec = ConstantSpec::R { rho, a, s1, s2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> ConstantKind {
        match self {
            ConstantSpec::P { .. } => ConstantKind::P,
            ConstantSpec::H { .. } => ConstantKind::H,
            ConstantSpec::R { .. } => ConstantKind::R,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ConstantSpec::P { w1, w2, s } => {
                check_weight("w1", w1)?;
                check_weight("w2", w2)?;
                check_budget(s)?;
                if !(2.0 * w1 > w2) {
                    return Err(Error::Precondition(format!(
                        "P requires 2·w1 > w2 (got w1={w1}, w2={w2}); the constant may be infinite"
                    )));
                }
            }
            ConstantSpec::H { w1, w2, s } => {
                check_weight("w1", w1)?;
                check_weight("w2", w2)?;
                check_budget(s)?;
                if ((w2 - 2.0 * w1) / w2).abs() > RATIO_TOL {
                    return Err(Error::Precondition(format!(
                        "H is only defined here for w2 = 2·w1 (got w1={w1}, w2={w2})"
                    )));
                }
            }
            ConstantSpec::R { rho, a, s1, s2 } => {
                if !(rho > -1.0 && rho < 1.0) {
                    return Err(Error::Domain(format!("correlation must lie in (-1,1), got {rho}")));
                }
                check_budget(s1)?;
                check_budget(s2)?;
                if !(a > rho.max(0.0) && a.is_finite()) {
                    return Err(Error::Precondition(format!("R requires a > max(0, rho) (got a={a}, rho={rho})")));
                }
            }
        }
        Ok(())
    }

    /// Exponent weights `(λ₁, λ₂)` of `R`.
    pub fn r_weights(rho: f64, a: f64) -> (f64, f64) {
        let d = 1.0 - rho * rho;
        ((1.0 - a * rho) / d, (a - rho) / d)
    }

    /// The same constant with a different budget (both components for `R`).
    fn with_budget(&self, budget: (f64, f64)) -> Self {
        match *self {
            ConstantSpec::P { w1, w2, .. } => ConstantSpec::P { w1, w2, s: budget.0 },
            ConstantSpec::H { w1, w2, .. } => ConstantSpec::H { w1, w2, s: budget.0 },
            ConstantSpec::R { rho, a, .. } => ConstantSpec::R { rho, a, s1: budget.0, s2: budget.1 },
        }
    }
}

/// How paths on `[0, ∞)` are discretized for `P` and `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    /// Grid spacing; kept fixed while the horizon grows.
    pub dt: f64,
    /// Fixed horizon, or `None` for the adaptive rule: start at `10/w`
    /// (`w` the smallest drift) and double until every estimate moves by
    /// less than half a standard error.
    pub horizon: Option<f64>,
    /// Replace the grid supremum by the exact continuous supremum of the
    /// Brownian interpolation for zero-budget entries.
    pub bridge: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions { dt: 1.0 / 64.0, horizon: None, bridge: false }
    }
}

impl PathOptions {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(h) = self.horizon {
            if !(h >= 2.0 * self.dt && h.is_finite()) {
                return Err(Error::Domain(format!("horizon {h} must cover at least two steps")));
            }
        }
        Ok(())
    }
}

/// Windows used to extrapolate `Ĥ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    /// Window lengths `Δ`, strictly increasing, at least three.
    pub deltas: Vec<f64>,
    /// Grid steps per unit time.
    pub steps_per_unit: usize,
    /// Continuous supremum for zero-budget entries (see [`PathOptions::bridge`]).
    pub bridge: bool,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions { deltas: vec![4.0, 8.0, 16.0], steps_per_unit: 16, bridge: false }
    }
}

impl WindowOptions {
    fn validate(&self) -> Result<()> {
        if self.deltas.len() < 3 {
            return Err(Error::Config("at least three window lengths are needed for the extrapolation".into()));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Domain("window lengths must be positive".into()));
        }
        if self.deltas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("window lengths must be strictly increasing".into()));
        }
        if self.steps_per_unit == 0 {
            return Err(Error::Domain("steps_per_unit must be positive".into()));
        }
        Ok(())
    }
}

/// Per-budget summary of one Monte Carlo pass.
#[derive(Debug, Clone, Copy)]
struct PassStat {
    mean: f64,
    se: f64,
}

struct Pass {
    stats: Vec<PassStat>,
    moments: Moments,
    tail_loss: u64,
}

fn summarize(m: &Moments, tail_loss: u64) -> Pass {
    let stats = (0..m.dim()).map(|i| PassStat { mean: m.mean(i), se: m.stderr(i) }).collect();
    Pass { stats, moments: m.clone(), tail_loss }
}

fn merge_pass(acc: &mut (Moments, u64), part: (Moments, u64)) {
    acc.0.merge(&part.0);
    acc.1 += part.1;
}

/// One pass of `P` over paths `B(t) − w₁t` on `n_steps` steps of size `dt`.
fn p_pass(w1: f64, w2: f64, budgets: &[f64], opts: &PathOptions, n_steps: usize, sampling: &Sampling) -> Result<Pass> {
    let dt = opts.dt;
    let counts: Vec<usize> = budgets.iter().map(|&s| required_count(s, dt)).collect();
    let bridged: Vec<bool> = budgets.iter().map(|&s| opts.bridge && s == 0.0).collect();
    let any_bridge = bridged.iter().any(|&b| b);
    let seed = sampling.seed;
    let k = budgets.len();
    let (m, lost) = run_batches(
        sampling,
        |range| {
            let mut buf = vec![0.0; n_steps + 1];
            let mut scratch = vec![0.0; n_steps];
            let mut q = vec![0.0; k];
            let mut x = vec![0.0; k];
            let mut m = Moments::new(k);
            let mut lost = 0u64;
            for i in range {
                fill_drifted(&mut buf, w1, dt, seed, i);
                scratch.copy_from_slice(&buf[..n_steps]);
                quantiles_for_counts(&mut scratch, &counts, &mut q);
                if any_bridge {
                    let mut aux = path_rng(seed, StreamDomain::Auxiliary, i);
                    let sup = bridge_sup(&buf, dt, &mut aux);
                    for (qj, &b) in q.iter_mut().zip(&bridged) {
                        if b {
                            *qj = sup;
                        }
                    }
                }
                for j in 0..k {
                    x[j] = guarded_exp(w2 * q[j], &mut lost) / w2;
                }
                m.push(&x);
            }
            (m, lost)
        },
        merge_pass,
    )?;
    Ok(summarize(&m, lost))
}

/// One pass of `R` over correlated pairs `(W₁(t) − t, W₂(t) − at)`.
fn r_pass(rho: f64, a: f64, budgets: &[(f64, f64)], opts: &PathOptions, n_steps: usize, sampling: &Sampling) -> Result<Pass> {
    let dt = opts.dt;
    let (l1, l2) = ConstantSpec::r_weights(rho, a);
    let c1: Vec<usize> = budgets.iter().map(|b| required_count(b.0, dt)).collect();
    let c2: Vec<usize> = budgets.iter().map(|b| required_count(b.1, dt)).collect();
    let bridged: Vec<(bool, bool)> = budgets.iter().map(|b| (opts.bridge && b.0 == 0.0, opts.bridge && b.1 == 0.0)).collect();
    let any_bridge = opts.bridge && bridged.iter().any(|b| b.0 || b.1);
    let seed = sampling.seed;
    let k = budgets.len();
    let (m, lost) = run_batches(
        sampling,
        |range| {
            let mut v1 = vec![0.0; n_steps + 1];
            let mut v2 = vec![0.0; n_steps + 1];
            let mut scratch = vec![0.0; n_steps];
            let mut q1 = vec![0.0; k];
            let mut q2 = vec![0.0; k];
            let mut x = vec![0.0; k];
            let mut m = Moments::new(k);
            let mut lost = 0u64;
            for i in range {
                let mut stepper = PairStepper::new(seed, i, rho, 1.0, a, dt);
                let (mut y1, mut y2) = (0.0, 0.0);
                for j in 1..=n_steps {
                    let (d1, d2) = stepper.step();
                    y1 += d1;
                    y2 += d2;
                    v1[j] = y1;
                    v2[j] = y2;
                }
                scratch.copy_from_slice(&v1[..n_steps]);
                quantiles_for_counts(&mut scratch, &c1, &mut q1);
                scratch.copy_from_slice(&v2[..n_steps]);
                quantiles_for_counts(&mut scratch, &c2, &mut q2);
                if any_bridge {
                    // Independent bridges are exact only for independent
                    // coordinates; `estimate_r_multi` enforces rho = 0.
                    let mut aux = path_rng(seed, StreamDomain::Auxiliary, i);
                    let s1 = bridge_sup(&v1, dt, &mut aux);
                    let s2 = bridge_sup(&v2, dt, &mut aux);
                    for j in 0..k {
                        if bridged[j].0 {
                            q1[j] = s1;
                        }
                        if bridged[j].1 {
                            q2[j] = s2;
                        }
                    }
                }
                for j in 0..k {
                    x[j] = guarded_exp(l1 * q1[j] + l2 * q2[j], &mut lost) / (l1 * l2);
                }
                m.push(&x);
            }
            (m, lost)
        },
        merge_pass,
    )?;
    Ok(summarize(&m, lost))
}

/// Result of the horizon search.
struct Adaptive {
    pass: Pass,
    n_steps: usize,
    warnings: Vec<String>,
}

/// Run `pass` on a fixed horizon, or grow the horizon by doubling the step
/// count (so every path only gets extended: common random numbers) until all
/// estimates move by less than half a standard error.
fn with_horizon<F>(opts: &PathOptions, slowest_drift: f64, mut pass: F) -> Result<Adaptive>
where
    F: FnMut(usize) -> Result<Pass>,
{
    if let Some(h) = opts.horizon {
        let n_steps = (h / opts.dt).round() as usize;
        return Ok(Adaptive { pass: pass(n_steps)?, n_steps, warnings: Vec::new() });
    }
    let mut n_steps = ((10.0 / slowest_drift) / opts.dt).ceil().max(2.0) as usize;
    let mut prev = pass(n_steps)?;
    for _ in 0..MAX_DOUBLINGS {
        let next_steps = 2 * n_steps;
        let next = pass(next_steps)?;
        let settled = prev
            .stats
            .iter()
            .zip(&next.stats)
            .all(|(p, q)| (q.mean - p.mean).abs() < 0.5 * q.se || q.mean == p.mean);
        n_steps = next_steps;
        prev = next;
        if settled {
            return Ok(Adaptive { pass: prev, n_steps, warnings: Vec::new() });
        }
    }
    Ok(Adaptive {
        pass: prev,
        n_steps,
        warnings: vec![format!(
            "horizon did not settle after {MAX_DOUBLINGS} doublings; truncation error may exceed sampling error"
        )],
    })
}

#[derive(Serialize)]
struct HashInput<'a, O: Serialize> {
    estimator: &'a str,
    spec: ConstantSpec,
    options: &'a O,
    n: u64,
    seed: u64,
}

fn finish<O: Serialize>(
    spec: ConstantSpec,
    options: &O,
    sampling: &Sampling,
    stat: PassStat,
    tail_loss: u64,
    warnings: &[String],
) -> Result<EstimatorResult> {
    let hash = config_hash(&HashInput { estimator: "constant", spec, options, n: sampling.n, seed: sampling.seed })?;
    let mut r = EstimatorResult::new(stat.mean, stat.se, sampling.n, sampling.seed, hash);
    r.tail_loss = tail_loss;
    r.warnings = warnings.to_vec();
    if tail_loss > 0 {
        r.warnings.push(format!("{tail_loss} samples hit the exponent clamp; the estimate is invalid"));
    }
    Ok(r)
}

/// Estimate `P̂(w₁, w₂, s)`.
pub fn estimate_p(spec: &ConstantSpec, opts: &PathOptions, sampling: &Sampling) -> Result<EstimatorResult> {
    match *spec {
        ConstantSpec::P { w1, w2, s } => Ok(estimate_p_multi(w1, w2, &[s], opts, sampling)?.remove(0)),
        _ => Err(Error::Config(format!("estimate_p called with a {:?} spec", spec.kind()))),
    }
}

/// Estimate `P̂(w₁, w₂, s)` for several budgets on one set of paths.
pub fn estimate_p_multi(
    w1: f64,
    w2: f64,
    budgets: &[f64],
    opts: &PathOptions,
    sampling: &Sampling,
) -> Result<Vec<EstimatorResult>> {
    opts.validate()?;
    let specs = budgets.iter().map(|&s| ConstantSpec::p(w1, w2, s)).collect::<Result<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(Error::Config("no budgets given".into()));
    }
    let ad = with_horizon(opts, w1, |n_steps| p_pass(w1, w2, budgets, opts, n_steps, sampling))?;
    collect(specs, opts, sampling, ad)
}

/// Estimate `R̂(s₁, s₂)`.
pub fn estimate_r(spec: &ConstantSpec, opts: &PathOptions, sampling: &Sampling) -> Result<EstimatorResult> {
    match *spec {
        ConstantSpec::R { rho, a, s1, s2 } => Ok(estimate_r_multi(rho, a, &[(s1, s2)], opts, sampling)?.remove(0)),
        _ => Err(Error::Config(format!("estimate_r called with a {:?} spec", spec.kind()))),
    }
}

/// Estimate `R̂` for several budget pairs on one set of paths.
pub fn estimate_r_multi(
    rho: f64,
    a: f64,
    budgets: &[(f64, f64)],
    opts: &PathOptions,
    sampling: &Sampling,
) -> Result<Vec<EstimatorResult>> {
    opts.validate()?;
    let specs = budgets.iter().map(|&(s1, s2)| ConstantSpec::r(rho, a, s1, s2)).collect::<Result<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(Error::Config("no budgets given".into()));
    }
    if opts.bridge && rho != 0.0 {
        return Err(Error::Config(
            "continuous suprema are only available for independent coordinates (rho = 0)".into(),
        ));
    }
    let ad = with_horizon(opts, a.min(1.0), |n_steps| r_pass(rho, a, budgets, opts, n_steps, sampling))?;
    collect(specs, opts, sampling, ad)
}

/// A budget ratio `C(S)/C(0)` estimated on common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub numerator: EstimatorResult,
    pub denominator: EstimatorResult,
    /// The ratio, with a delta-method standard error that accounts for the
    /// covariance of numerator and denominator.
    pub ratio: EstimatorResult,
}

/// Estimate `C(S)/C(0)` for a `P` or `R` spec `C(S)` on one set of paths.
pub fn estimate_budget_ratio(spec: &ConstantSpec, opts: &PathOptions, sampling: &Sampling) -> Result<RatioEstimate> {
    opts.validate()?;
    spec.validate()?;
    let zero = spec.with_budget((0.0, 0.0));
    let ad = match *spec {
        ConstantSpec::P { w1, w2, s } => {
            with_horizon(opts, w1, |n| p_pass(w1, w2, &[s, 0.0], opts, n, sampling))?
        }
        ConstantSpec::R { rho, a, s1, s2 } => {
            if opts.bridge && rho != 0.0 {
                return Err(Error::Config(
                    "continuous suprema are only available for independent coordinates (rho = 0)".into(),
                ));
            }
            with_horizon(opts, a.min(1.0), |n| r_pass(rho, a, &[(s1, s2), (0.0, 0.0)], opts, n, sampling))?
        }
        ConstantSpec::H { .. } => {
            return Err(Error::Config("budget ratios are only estimated for P and R".into()))
        }
    };
    let m = &ad.pass.moments;
    let (m1, m0) = (m.mean(0), m.mean(1));
    if !(m0 > 0.0) {
        return Err(Error::Logic("zero-budget constant estimate is not positive".into()));
    }
    let r = m1 / m0;
    let n = m.count as f64;
    let var = (m.cov(0, 0) - 2.0 * r * m.cov(0, 1) + r * r * m.cov(1, 1)) / (m0 * m0 * n);
    let stat = PassStat { mean: r, se: var.max(0.0).sqrt() };
    let hash = config_hash(&(HashInput { estimator: "ratio", spec: *spec, options: opts, n: sampling.n, seed: sampling.seed }))?;
    let mut ratio = EstimatorResult::new(stat.mean, stat.se, sampling.n, sampling.seed, hash);
    ratio.tail_loss = ad.pass.tail_loss;
    ratio.warnings = ad.warnings.clone();
    ratio.horizon = Some(ad.n_steps as f64 * opts.dt);
    ratio.n_steps = Some(ad.n_steps);
    let mut parts = collect(vec![*spec, zero], opts, sampling, ad)?;
    let denominator = parts.pop().expect("two results");
    let numerator = parts.pop().expect("two results");
    Ok(RatioEstimate { numerator, denominator, ratio: ratio.checked()? })
}

fn collect(specs: Vec<ConstantSpec>, opts: &PathOptions, sampling: &Sampling, ad: Adaptive) -> Result<Vec<EstimatorResult>> {
    let horizon = ad.n_steps as f64 * opts.dt;
    specs
        .into_iter()
        .zip(&ad.pass.stats)
        .map(|(spec, &stat)| {
            let mut r = finish(spec, opts, sampling, stat, ad.pass.tail_loss, &ad.warnings)?;
            r.horizon = Some(horizon);
            r.n_steps = Some(ad.n_steps);
            r.checked()
        })
        .collect()
}

/// `log Σ exp(v)`.
fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Windowed pass: `E[e^{w₂ξ_S}]/(w₂Δ)` over `B(t) − w₁t` on `[0, Δ]`.
///
/// Plain sampling is hopeless here (the integrand is dominated by rare paths
/// that climb for most of the window), so paths are drawn from a mixture of
/// tilted laws: pick `K` uniformly in `{0, …, N−1}`, give the first `K`
/// increments drift `+w₁` and the rest `−w₁`. With `w₂ = 2w₁` the mixture's
/// likelihood ratio is `N⁻¹ Σ_{k<N} e^{w₂Y_k}`, which gives the unbiased
/// estimator `e^{w₂ξ}/(w₂ dt Σ_{k<N} e^{w₂Y_k})`.
fn h_window_pass(w1: f64, budgets: &[f64], delta: f64, opts: &WindowOptions, window: u64, sampling: &Sampling) -> Result<Pass> {
    let w2 = 2.0 * w1;
    let n_steps = ((delta * opts.steps_per_unit as f64).round() as usize).max(2);
    let dt = delta / n_steps as f64;
    let sd = dt.sqrt();
    let counts: Vec<usize> = budgets.iter().map(|&s| required_count(s, dt)).collect();
    if counts.iter().any(|&m| m > n_steps) {
        return Err(Error::Domain(format!("a budget is not below the window length {delta}")));
    }
    let bridged: Vec<bool> = budgets.iter().map(|&s| opts.bridge && s == 0.0).collect();
    let any_bridge = bridged.iter().any(|&b| b);
    let seed = sampling.seed;
    let k = budgets.len();
    // Each window gets its own block of stream indices.
    let offset = window << 40;
    let (m, lost) = run_batches(
        sampling,
        |range| {
            let mut buf = vec![0.0; n_steps + 1];
            let mut scratch = vec![0.0; n_steps];
            let mut expo = vec![0.0; n_steps];
            let mut q = vec![0.0; k];
            let mut x = vec![0.0; k];
            let mut m = Moments::new(k);
            let lost = 0u64;
            for i in range {
                let idx = offset | i;
                let mut rng = path_rng(seed, StreamDomain::Increments, idx);
                let kk = rng.random_range(0..n_steps);
                let mut y = 0.0;
                for j in 0..n_steps {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    let drift = if j < kk { w1 * dt } else { -w1 * dt };
                    y += sd * z + drift;
                    buf[j + 1] = y;
                }
                for (e, v) in expo.iter_mut().zip(&buf[..n_steps]) {
                    *e = w2 * v;
                }
                let log_norm = log_sum_exp(&expo) + dt.ln();
                scratch.copy_from_slice(&buf[..n_steps]);
                quantiles_for_counts(&mut scratch, &counts, &mut q);
                if any_bridge {
                    let mut aux = path_rng(seed, StreamDomain::Auxiliary, idx);
                    let sup = bridge_sup(&buf, dt, &mut aux);
                    for (qj, &b) in q.iter_mut().zip(&bridged) {
                        if b {
                            *qj = sup;
                        }
                    }
                }
                for j in 0..k {
                    x[j] = (w2 * q[j] - log_norm).exp() / w2;
                }
                m.push(&x);
            }
            (m, lost)
        },
        merge_pass,
    )?;
    Ok(summarize(&m, lost))
}

/// Least-squares fit of `g(Δ) = c + b/Δ`; returns `(c, stderr, residual statistic)`.
///
/// The intercept is a fixed linear combination of the window estimates, so
/// its sampling error propagates exactly. The residual statistic compares the
/// fit residuals with their expected size under pure sampling noise.
pub fn extrapolate_windows(points: &[WindowPoint]) -> Result<(f64, f64, f64)> {
    let k = points.len();
    if k < 3 {
        return Err(Error::Config("need at least three windows".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.delta).collect();
    let sx: f64 = xs.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let det = k as f64 * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::Config("window lengths must be distinct".into()));
    }
    // Rows of (XᵀX)⁻¹Xᵀ.
    let alpha: Vec<f64> = xs.iter().map(|x| (sxx - sx * x) / det).collect();
    let beta: Vec<f64> = xs.iter().map(|x| (k as f64 * x - sx) / det).collect();
    let c: f64 = alpha.iter().zip(points).map(|(a, p)| a * p.estimate).sum();
    let b: f64 = beta.iter().zip(points).map(|(a, p)| a * p.estimate).sum();
    let var_c: f64 = alpha.iter().zip(points).map(|(a, p)| a * a * p.stderr * p.stderr).sum();
    let mut rss = 0.0;
    let mut noise = 0.0;
    for (i, p) in points.iter().enumerate() {
        let r = p.estimate - c - b * xs[i];
        let h = alpha[i] + beta[i] * xs[i];
        rss += r * r;
        noise += (1.0 - h) * p.stderr * p.stderr;
    }
    let stat = if noise > 0.0 { (rss / noise).sqrt() } else if rss > 0.0 { f64::INFINITY } else { 0.0 };
    Ok((c, var_c.sqrt() * stat.max(1.0), stat))
}

/// Estimate `Ĥ(w₁, 2w₁, s)`.
pub fn estimate_h(spec: &ConstantSpec, opts: &WindowOptions, sampling: &Sampling) -> Result<EstimatorResult> {
    match *spec {
        ConstantSpec::H { w1, w2, s } => Ok(estimate_h_multi(w1, w2, &[s], opts, sampling)?.remove(0)),
        _ => Err(Error::Config(format!("estimate_h called with a {:?} spec", spec.kind()))),
    }
}

/// Estimate `Ĥ(w₁, w₂, s)` for several budgets on one set of paths per window.
pub fn estimate_h_multi(
    w1: f64,
    w2: f64,
    budgets: &[f64],
    opts: &WindowOptions,
    sampling: &Sampling,
) -> Result<Vec<EstimatorResult>> {
    opts.validate()?;
    let specs = budgets.iter().map(|&s| ConstantSpec::h(w1, w2, s)).collect::<Result<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(Error::Config("no budgets given".into()));
    }
    let passes = opts
        .deltas
        .iter()
        .enumerate()
        .map(|(wi, &d)| h_window_pass(w1, budgets, d, opts, wi as u64, sampling))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(specs.len());
    for (j, spec) in specs.into_iter().enumerate() {
        let points: Vec<WindowPoint> = opts
            .deltas
            .iter()
            .zip(&passes)
            .map(|(&delta, p)| WindowPoint { delta, estimate: p.stats[j].mean, stderr: p.stats[j].se })
            .collect();
        let (c, se, stat) = extrapolate_windows(&points)?;
        let mut warnings = Vec::new();
        if stat > 5.0 {
            warnings.push(format!(
                "window extrapolation residual is {stat:.1}x the sampling error; the limit may not be reached"
            ));
        }
        let mut r = finish(spec, opts, sampling, PassStat { mean: c, se }, 0, &warnings)?;
        r.windows = points;
        out.push(r.checked()?);
    }
    Ok(out)
}

/// Dispatch on the constant kind, using default discretizations where the
/// caller has no preference.
pub fn estimate(spec: &ConstantSpec, paths: &PathOptions, windows: &WindowOptions, sampling: &Sampling) -> Result<EstimatorResult> {
    match spec.kind() {
        ConstantKind::P => estimate_p(spec, paths, sampling),
        ConstantKind::H => estimate_h(spec, windows, sampling),
        ConstantKind::R => estimate_r(spec, paths, sampling),
    }
}

/// Estimate one spec at several budgets on common random numbers.
pub fn estimate_budgets(
    spec: &ConstantSpec,
    budgets: &[(f64, f64)],
    paths: &PathOptions,
    windows: &WindowOptions,
    sampling: &Sampling,
) -> Result<Vec<EstimatorResult>> {
    let specs: Vec<ConstantSpec> = budgets.iter().map(|&b| spec.with_budget(b)).collect();
    let firsts: Vec<f64> = budgets.iter().map(|b| b.0).collect();
    let out = match *spec {
        ConstantSpec::P { w1, w2, .. } => estimate_p_multi(w1, w2, &firsts, paths, sampling)?,
        ConstantSpec::H { w1, w2, .. } => estimate_h_multi(w1, w2, &firsts, windows, sampling)?,
        ConstantSpec::R { rho, a, .. } => estimate_r_multi(rho, a, budgets, paths, sampling)?,
    };
    debug_assert_eq!(out.len(), specs.len());
    Ok(out)
}

/// Which relative position of the two crossing times a weight table describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingOrder {
    /// Both coordinates cross at the same time.
    Simultaneous,
    /// The second coordinate crosses after the first.
    SecondLater,
    /// The second coordinate crosses before the first.
    SecondEarlier,
}

/// Exponent weights and drifts of the local two-dimensional problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaTable {
    pub order: CrossingOrder,
    pub t_star: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub drift1: f64,
    pub drift2: f64,
}

/// Weights for an explicit crossing order at optimizer `t*`.
pub fn lambda_for_order(params: &ModelParams, order: CrossingOrder, t: f64) -> Result<LambdaTable> {
    params.validate()?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t* must lie in (0,1], got {t}")));
    }
    let (rho, a) = (params.rho, params.a);
    let r2 = rho * rho;
    let (lambda1, lambda2, drift1, drift2) = match order {
        CrossingOrder::Simultaneous => {
            let l1 = (1.0 - a * rho) / (t * (1.0 - r2));
            let l2 = (a - rho) / (t * (1.0 - r2));
            (l1, l2, 1.0, a)
        }
        CrossingOrder::SecondLater => {
            let l2 = (a - rho) / (t - r2);
            ((t - a * rho) / (t - r2), l2, 1.0, l2)
        }
        CrossingOrder::SecondEarlier => {
            let l1 = (1.0 - a * rho) / (1.0 - r2 * t);
            (l1, (a - rho * t) / (t - r2 * t * t), l1, a / t)
        }
    };
    Ok(LambdaTable { order, t_star: t, lambda1, lambda2, drift1, drift2 })
}

/// Weights for a classified regime: simultaneous crossing in case (i),
/// second-coordinate-earlier in the critical and subcritical cases.
pub fn lambda_table(regime: &Regime, params: &ModelParams) -> Result<LambdaTable> {
    let order = match regime.kind {
        RegimeKind::DimReduction => {
            return Err(Error::Precondition(
                "no two-dimensional weights exist when a <= rho (dimension reduction)".into(),
            ))
        }
        RegimeKind::Case1Supercritical => CrossingOrder::Simultaneous,
        _ => CrossingOrder::SecondEarlier,
    };
    lambda_for_order(params, order, regime.t_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify, force_regime, DEFAULT_BOUNDARY_TOL};
    use crate::paths::{simulate_drifted, sojourn_time, level_quantile};

    fn closed_form_p0(w1: f64, w2: f64) -> f64 {
        2.0 * w1 / (w2 * (2.0 * w1 - w2))
    }

    #[test]
    fn spec_preconditions() {
        assert!(matches!(ConstantSpec::p(1.0, 2.0, 0.0), Err(Error::Precondition(_))));
        assert!(matches!(ConstantSpec::h(1.0, 1.5, 0.0), Err(Error::Precondition(_))));
        assert!(matches!(ConstantSpec::r(0.5, 0.5, 0.0, 0.0), Err(Error::Precondition(_))));
        assert!(matches!(ConstantSpec::r(-0.5, 0.0, 0.0, 0.0), Err(Error::Precondition(_))));
        assert!(ConstantSpec::p(1.0, 1.0, -1.0).is_err());
        assert!(ConstantSpec::h(0.5, 1.0, 1.0).is_ok());
        let (l1, l2) = ConstantSpec::r_weights(0.5, 1.0);
        assert!((l1 - 2.0 / 3.0).abs() < 1e-15 && (l2 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn p_matches_closed_form_at_zero_budget() {
        let opts = PathOptions { bridge: true, ..PathOptions::default() };
        for &(w1, w2) in &[(1.0, 1.0), (2.0, 2.0), (2.0, 1.0)] {
            let r = estimate_p(&ConstantSpec::p(w1, w2, 0.0).unwrap(), &opts, &Sampling::new(100_000, 11)).unwrap();
            let target = closed_form_p0(w1, w2);
            assert!(r.is_valid());
            assert!((r.estimate - target).abs() < 3.0 * r.stderr, "P({w1},{w2},0) = {} ± {} vs {target}", r.estimate, r.stderr);
        }
    }

    #[test]
    fn p_is_pathwise_monotone_in_budget() {
        let budgets = [0.0, 0.5, 1.0, 2.0];
        let r = estimate_p_multi(1.0, 1.0, &budgets, &PathOptions::default(), &Sampling::new(5_000, 3)).unwrap();
        for w in r.windows(2) {
            assert!(w[1].estimate <= w[0].estimate);
        }
        // Shared paths: every result reports the same horizon.
        assert!(r.iter().all(|x| x.horizon == r[0].horizon));
        assert_ne!(r[0].config_hash, r[1].config_hash);
    }

    #[test]
    fn grid_estimate_is_below_bridge_estimate() {
        let s = Sampling::new(20_000, 5);
        let grid = estimate_p(&ConstantSpec::p(1.0, 1.0, 0.0).unwrap(), &PathOptions::default(), &s).unwrap();
        let cont = estimate_p(
            &ConstantSpec::p(1.0, 1.0, 0.0).unwrap(),
            &PathOptions { bridge: true, ..PathOptions::default() },
            &s,
        )
        .unwrap();
        assert!(grid.estimate < cont.estimate);
    }

    #[test]
    fn fixed_horizon_is_respected() {
        let opts = PathOptions { horizon: Some(4.0), ..PathOptions::default() };
        let r = estimate_p(&ConstantSpec::p(1.0, 1.0, 0.0).unwrap(), &opts, &Sampling::new(1000, 1)).unwrap();
        assert_eq!(r.horizon, Some(4.0));
        assert_eq!(r.n_steps, Some(256));
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let spec = ConstantSpec::p(1.0, 1.0, 0.5).unwrap();
        let a = estimate_p(&spec, &PathOptions::default(), &Sampling::new(9_000, 4).with_workers(1)).unwrap();
        let b = estimate_p(&spec, &PathOptions::default(), &Sampling::new(9_000, 4).with_workers(3)).unwrap();
        assert_eq!(a, b);
        let h = ConstantSpec::h(1.0, 2.0, 0.0).unwrap();
        let wo = WindowOptions { deltas: vec![1.0, 2.0, 3.0], steps_per_unit: 8, bridge: false };
        let a = estimate_h(&h, &wo, &Sampling::new(5_000, 4).with_workers(1)).unwrap();
        let b = estimate_h(&h, &wo, &Sampling::new(5_000, 4).with_workers(2)).unwrap();
        assert_eq!(a, b);
    }

    /// `E[e^{w M_Δ}]/(wΔ)` for the continuous supremum `M_Δ` of `B(t) − μt`
    /// on `[0, Δ]`, from the reflection formula
    /// `P(M_Δ > x) = Φ̄((x+μΔ)/√Δ) + e^{−2μx} Φ̄((x−μΔ)/√Δ)`, by quadrature.
    fn window_oracle(mu: f64, w: f64, delta: f64) -> f64 {
        let sd = delta.sqrt();
        let tail = |x: f64| crate::gauss::sf((x + mu * delta) / sd) + (-2.0 * mu * x).exp() * crate::gauss::sf((x - mu * delta) / sd);
        let upper = mu * delta + 12.0 * sd + 40.0 / w;
        let n = 200_000;
        let h = upper / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = i as f64 * h;
            let f = w * (w * x).exp() * tail(x);
            acc += if i == 0 || i == n { 0.5 * f } else { f };
        }
        (1.0 + acc * h) / (w * delta)
    }

    #[test]
    fn h_windows_match_reflection_oracle() {
        let wo = WindowOptions { deltas: vec![2.0, 4.0, 8.0], steps_per_unit: 8, bridge: true };
        let r = estimate_h(&ConstantSpec::h(1.0, 2.0, 0.0).unwrap(), &wo, &Sampling::new(40_000, 8)).unwrap();
        for p in &r.windows {
            let target = window_oracle(1.0, 2.0, p.delta);
            assert!((p.estimate - target).abs() < 3.0 * p.stderr, "Δ={}: {} ± {} vs {target}", p.delta, p.estimate, p.stderr);
        }
    }

    #[test]
    fn h_is_monotone_and_scaled() {
        let wo = WindowOptions { deltas: vec![4.0, 8.0, 16.0], steps_per_unit: 8, bridge: true };
        let s = Sampling::new(20_000, 21);
        let r = estimate_h_multi(1.0, 2.0, &[0.0, 1.0], &wo, &s).unwrap();
        assert!(r[1].estimate <= r[0].estimate);
        for (p0, p1) in r[0].windows.iter().zip(&r[1].windows) {
            assert!(p1.estimate <= p0.estimate);
        }
        assert!((r[0].estimate - 1.0).abs() < 0.05, "H(1,2,0) = {}", r[0].estimate);
    }

    #[test]
    fn extrapolation_recovers_exact_model() {
        let pts: Vec<WindowPoint> = [4.0, 8.0, 16.0]
            .iter()
            .map(|&d| WindowPoint { delta: d, estimate: 1.5 + 2.0 / d, stderr: 0.01 })
            .collect();
        let (c, se, stat) = extrapolate_windows(&pts).unwrap();
        assert!((c - 1.5).abs() < 1e-12);
        assert!(stat < 1e-9);
        assert!(se > 0.0);
        let bent: Vec<WindowPoint> = [4.0, 8.0, 16.0]
            .iter()
            .map(|&d| WindowPoint { delta: d, estimate: 1.5 + 8.0 / (d * d), stderr: 1e-4 })
            .collect();
        assert!(extrapolate_windows(&bent).unwrap().2 > 5.0);
    }

    #[test]
    fn r_factorizes_under_independence() {
        let opts = PathOptions { bridge: true, ..PathOptions::default() };
        let r = estimate_r(&ConstantSpec::r(0.0, 0.5, 0.0, 0.0).unwrap(), &opts, &Sampling::new(100_000, 17)).unwrap();
        let target = closed_form_p0(1.0, 1.0) * closed_form_p0(0.5, 0.5);
        assert!((r.estimate - target).abs() < 3.0 * r.stderr, "R = {} ± {} vs {target}", r.estimate, r.stderr);
        let bad = estimate_r(&ConstantSpec::r(0.3, 0.5, 0.0, 0.0).unwrap(), &opts, &Sampling::new(10, 1));
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn r_is_pathwise_monotone() {
        let budgets = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 2.0)];
        let r = estimate_r_multi(0.5, 0.8, &budgets, &PathOptions::default(), &Sampling::new(4_000, 2)).unwrap();
        assert!(r[1].estimate <= r[0].estimate && r[2].estimate <= r[0].estimate);
        assert!(r[3].estimate <= r[1].estimate && r[3].estimate <= r[2].estimate);
        assert!(r[4].estimate <= r[3].estimate);
    }

    #[test]
    fn quantile_identity_by_quadrature() {
        for i in 0..100 {
            let p = simulate_drifted(1.0, 4.0, 256, 77, i).unwrap();
            let s = (i % 5) as f64 * 0.3;
            let w = 1.0 + (i % 3) as f64 * 0.5;
            let xi = level_quantile(&p, s).unwrap();
            let closed = (w * xi).exp() / w;
            let lo = p.monitored().iter().cloned().fold(f64::INFINITY, f64::min) - 30.0 / w;
            let hi = p.grid_sup() + 1.0;
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for k in 0..n {
                let x = lo + (k as f64 + 0.5) * h;
                if sojourn_time(&p, x) > s {
                    acc += (w * x).exp();
                }
            }
            let quad = acc * h + (w * lo).exp() / w;
            assert!(((quad - closed) / closed).abs() < 1e-3, "path {i}: {quad} vs {closed}");
        }
    }

    #[test]
    fn budget_ratio_is_consistent_with_parts() {
        let spec = ConstantSpec::r(0.5, 0.8, 1.0, 1.0).unwrap();
        let r = estimate_budget_ratio(&spec, &PathOptions::default(), &Sampling::new(20_000, 6)).unwrap();
        let direct = r.numerator.estimate / r.denominator.estimate;
        assert!((r.ratio.estimate - direct).abs() < 1e-15);
        assert!(r.ratio.estimate > 0.0 && r.ratio.estimate <= 1.0);
        // Positive correlation: the ratio is sharper than independent propagation.
        let indep = direct
            * ((r.numerator.stderr / r.numerator.estimate).powi(2) + (r.denominator.stderr / r.denominator.estimate).powi(2)).sqrt();
        assert!(r.ratio.stderr < indep);
        let zero = ConstantSpec::p(1.0, 1.0, 0.0).unwrap();
        let one = estimate_budget_ratio(&zero, &PathOptions::default(), &Sampling::new(2_000, 6)).unwrap();
        assert_eq!(one.ratio.estimate, 1.0);
        assert!(estimate_budget_ratio(&ConstantSpec::h(1.0, 2.0, 0.0).unwrap(), &PathOptions::default(), &Sampling::new(10, 1)).is_err());
    }

    #[test]
    fn lambda_examples() {
        let p = ModelParams::new(0.5, 1.0, 1.0, 1.0).unwrap();
        let t = lambda_table(&classify(&p, DEFAULT_BOUNDARY_TOL).unwrap(), &p).unwrap();
        assert_eq!(t.order, CrossingOrder::Simultaneous);
        assert!((t.lambda1 - 2.0 / 3.0).abs() < 1e-15 && (t.lambda2 - 2.0 / 3.0).abs() < 1e-15);

        let p = ModelParams::new(-0.6, 0.9, 1.0, 1.0).unwrap();
        let reg = classify(&p, DEFAULT_BOUNDARY_TOL).unwrap();
        assert_eq!(reg.kind, RegimeKind::Case4SubcriticalAlt1);
        let t = lambda_table(&reg, &p).unwrap();
        assert!((t.t_star - 0.721_153_8).abs() < 1e-7);
        assert!((t.lambda1 - 1.54 / (1.0 - 0.36 * t.t_star)).abs() < 1e-14);
        assert!((t.lambda1 - 2.08).abs() < 1e-12);
        // At the optimizer the exponent weights match the drifts of the
        // one-dimensional constants they feed.
        assert!((t.lambda1 - t.drift1).abs() < 1e-14);
        assert!((t.lambda2 - 2.0 * t.drift2).abs() < 1e-12);

        let p = ModelParams::new(0.7, 0.5, 0.0, 0.0).unwrap();
        assert!(lambda_table(&classify(&p, 0.0).unwrap(), &p).is_err());
    }

    #[test]
    fn tables_coincide_at_unit_optimizer() {
        let p = ModelParams::new(0.3, 1.0, 1.0, 1.0).unwrap();
        let eq = lambda_for_order(&p, CrossingOrder::Simultaneous, 1.0).unwrap();
        let later = lambda_for_order(&p, CrossingOrder::SecondLater, 1.0).unwrap();
        let earlier = lambda_for_order(&p, CrossingOrder::SecondEarlier, 1.0).unwrap();
        for t in [later, earlier] {
            assert!((t.lambda1 - eq.lambda1).abs() < 1e-15);
            assert!((t.lambda2 - eq.lambda2).abs() < 1e-15);
        }
    }

    #[test]
    fn subcritical_unit_ratio_weights_are_consistent() {
        let p = ModelParams::new(-0.8, 1.0, 0.0, 1.0).unwrap();
        let reg = force_regime(&p, RegimeKind::Case5SubcriticalA1).unwrap();
        let t = lambda_table(&reg, &p).unwrap();
        assert!((t.t_star - 0.480_769_2).abs() < 1e-7);
        assert!((t.lambda1 - t.drift1).abs() < 1e-14);
        assert!((t.lambda2 - 2.0 * t.drift2).abs() < 1e-12);
    }
}
