//! Direct Monte Carlo for joint ruin, joint cumulative Parisian ruin and
//! their ratio, on the unit horizon.
//!
//! For capital `u` and budgets `(S₁, S₂)`:
//!
//! * `π̂`: both coordinates cross their barriers `(u, au)` at some grid point;
//! * `ŝ`: both occupation times exceed `(S₁/u², S₂/u²)`;
//! * the ratio `ŝ/π̂` estimates the conditional probability of sojourn ruin
//!   given ruin.
//!
//! Sojourn ruin implies ruin on every path, so `ŝ ≤ π̂` holds at the counter
//! level, and every target evaluated on the same paths sees the same noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics::LimitResult;
use crate::error::{Error, Result};
use crate::estimate::{config_hash, run_batches, EstimatorResult, Sampling};
use crate::exact::one_dim_ruin;
use crate::model::{ModelParams, RegimeKind, SojournBudget};
use crate::paths::{check_grid, required_count, PairStepper};
use crate::quadform::{q_star_global, q_star_solution, RateInput, DEFAULT_GRID};
use crate::rng::{path_rng, StreamDomain};

/// Smallest sample size accepted by the probability estimators.
pub const MIN_PATHS: u64 = 10_000;

/// Effective sample size below which a weighted estimate is flagged.
pub const MIN_ESS: f64 = 100.0;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Path counts behind one probability estimate (weighted runs count paths
/// with nonzero indicator, not weights).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub ruin: u64,
    pub sojourn: u64,
    pub simultaneous: u64,
    pub first_coordinate: u64,
}

/// The ratio `ŝ/π̂`, or the reason it is unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RatioOutcome {
    Estimate { result: EstimatorResult, lo: f64, hi: f64 },
    NoData { message: String },
}

impl RatioOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            RatioOutcome::Estimate { result, .. } => Some(result.estimate),
            RatioOutcome::NoData { .. } => None,
        }
    }

    pub fn interval(&self) -> Option<(f64, f64)> {
        match self {
            RatioOutcome::Estimate { lo, hi, .. } => Some((*lo, *hi)),
            RatioOutcome::NoData { .. } => None,
        }
    }

    pub fn result(&self) -> Option<&EstimatorResult> {
        match self {
            RatioOutcome::Estimate { result, .. } => Some(result),
            RatioOutcome::NoData { .. } => None,
        }
    }
}

/// Estimates for one `(u, budget)` target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub u: f64,
    pub budget: SojournBudget,
    pub n_steps: usize,
    pub pi_hat: EstimatorResult,
    pub s_hat: EstimatorResult,
    pub ratio: RatioOutcome,
    /// Simultaneous ruin (both barriers exceeded at the same grid point);
    /// diagnostic only.
    pub pi_bar: EstimatorResult,
    /// Ruin of the first coordinate alone.
    pub first_coordinate: EstimatorResult,
    pub counts: Counts,
}

/// A linear change of drift pointing the mean path at the most likely ruin
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    /// Time at which the first coordinate's mean reaches its target.
    pub s_star: f64,
    /// Time at which the second coordinate's mean reaches its target.
    pub t_star: f64,
    /// `Σ⁻¹_{s*,t*} 𝐱` for the target point `𝐱`.
    pub b: [f64; 2],
}

impl Tilt {
    /// No change of measure.
    pub fn zero() -> Self {
        Tilt { s_star: 1.0, t_star: 1.0, b: [0.0, 0.0] }
    }

    /// Tilt toward the minimizer of the rate at capital `u`: under the new
    /// measure `(W₁(s*), W₂(t*))` has mean `u·𝐱*`, where `𝐱*` solves the
    /// constrained problem at `(s*, t*)`, so `(W₁*(s*), W₂*(t*))` is centred on
    /// or beyond the barriers.
    pub fn toward_minimizer(params: &ModelParams, u: f64) -> Result<Self> {
        let min = q_star_global(params, Some(u), DEFAULT_GRID)?;
        let (s, t) = *min
            .minimizers
            .first()
            .ok_or_else(|| Error::Logic("rate minimization returned no minimizer".into()))?;
        let input = RateInput::new(params, s, t, Some(u))?;
        let sol = q_star_solution(&input)?;
        let x = [u * sol.x[0], u * sol.x[1]];
        Ok(Tilt { s_star: s, t_star: t, b: input.sigma.solve(x) })
    }

    fn is_zero(&self) -> bool {
        self.b == [0.0, 0.0]
    }
}

/// One evaluation point of a shared simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub u: f64,
    /// Unscaled budgets; the required occupation is `S/u²`.
    pub budget: SojournBudget,
}

/// Per-target weighted sums.
#[derive(Debug, Clone, Default)]
struct Sums {
    counts: Counts,
    /// Σw·1π, Σw²·1π, Σw·1s, Σw²·1s, Σw·1π̄, Σw²·1π̄, Σw·1₁, Σw²·1₁
    w: [f64; 8],
}

impl Sums {
    fn add(&mut self, other: &Sums) {
        self.counts.ruin += other.counts.ruin;
        self.counts.sojourn += other.counts.sojourn;
        self.counts.simultaneous += other.counts.simultaneous;
        self.counts.first_coordinate += other.counts.first_coordinate;
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
    }
}

struct Batch {
    sums: Vec<Sums>,
    weight_sum: f64,
    weight_sq: f64,
}

struct Prepared {
    barrier1: f64,
    barrier2: f64,
    need1: usize,
    need2: usize,
}

/// Simulate `sampling.n` pairs on `[0,1]` and evaluate every target.
fn simulate_targets(params: &ModelParams, targets: &[Target], n_steps: usize, tilt: &Tilt, sampling: &Sampling) -> Result<Batch> {
    let dt = 1.0 / n_steps as f64;
    let prepared = targets
        .iter()
        .map(|t| {
            let (h1, h2) = t.budget.at(t.u)?.scaled()?;
            Ok(Prepared {
                barrier1: t.u,
                barrier2: params.a * t.u,
                need1: required_count(h1, dt),
                need2: required_count(h2, dt),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (rho, rho_bar) = (params.rho, params.rho_bar());
    // Steps k with left endpoint k·dt < s* (resp. t*) carry the extra drift.
    let ks = (tilt.s_star / dt).ceil() as usize;
    let kt = (tilt.t_star / dt).ceil() as usize;
    let mu1_early = tilt.b[0];
    let mu_t1 = rho * tilt.b[1];
    let mu_t2 = rho_bar * tilt.b[1];
    let tilted = !tilt.is_zero();
    let seed = sampling.seed;
    run_batches(
        sampling,
        |range| {
            let mut v1 = vec![0.0; n_steps];
            let mut v2 = vec![0.0; n_steps];
            let mut sums = vec![Sums::default(); prepared.len()];
            let (mut weight_sum, mut weight_sq) = (0.0, 0.0);
            for i in range {
                let mut st = PairStepper::new(seed, i, rho, params.c1, params.c2, dt);
                let (mut x1, mut x2) = (0.0, 0.0);
                let mut log_w = 0.0;
                // v[k] holds the path at t_k for the monitored k = 0..n_steps−1;
                // the final value is never monitored, so it is not stored.
                if tilted {
                    for k in 0..n_steps {
                        v1[k] = x1;
                        v2[k] = x2;
                        let m1 = if k < ks { mu1_early } else { 0.0 } + if k < kt { mu_t1 } else { 0.0 };
                        let m2 = if k < kt { mu_t2 } else { 0.0 };
                        let (d1, d2) = st.driver();
                        let b1 = d1 + m1 * dt;
                        let b2 = d2 + m2 * dt;
                        log_w += -m1 * b1 - m2 * b2 + 0.5 * (m1 * m1 + m2 * m2) * dt;
                        x1 += b1 - params.c1 * dt;
                        x2 += rho * b1 + rho_bar * b2 - params.c2 * dt;
                    }
                } else {
                    for k in 0..n_steps {
                        v1[k] = x1;
                        v2[k] = x2;
                        let (d1, d2) = st.step();
                        x1 += d1;
                        x2 += d2;
                    }
                }
                let w = log_w.exp();
                weight_sum += w;
                weight_sq += w * w;
                let max1 = v1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let max2 = v2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for (p, s) in prepared.iter().zip(sums.iter_mut()) {
                    let first = max1 > p.barrier1;
                    if first {
                        s.counts.first_coordinate += 1;
                        s.w[6] += w;
                        s.w[7] += w * w;
                    }
                    if !(first && max2 > p.barrier2) {
                        continue;
                    }
                    s.counts.ruin += 1;
                    s.w[0] += w;
                    s.w[1] += w * w;
                    let n1 = v1.iter().filter(|&&v| v > p.barrier1).count();
                    let n2 = v2.iter().filter(|&&v| v > p.barrier2).count();
                    if n1 >= p.need1 && n2 >= p.need2 {
                        s.counts.sojourn += 1;
                        s.w[2] += w;
                        s.w[3] += w * w;
                    }
                    if v1.iter().zip(&v2).any(|(&a, &b)| a > p.barrier1 && b > p.barrier2) {
                        s.counts.simultaneous += 1;
                        s.w[4] += w;
                        s.w[5] += w * w;
                    }
                }
            }
            Batch { sums, weight_sum, weight_sq }
        },
        |acc, part| {
            for (a, b) in acc.sums.iter_mut().zip(&part.sums) {
                a.add(b);
            }
            acc.weight_sum += part.weight_sum;
            acc.weight_sq += part.weight_sq;
        },
    )
}

#[derive(Serialize)]
struct McHash<'a> {
    estimator: &'a str,
    quantity: &'a str,
    params: &'a ModelParams,
    target: &'a Target,
    n_steps: usize,
    tilt: &'a Tilt,
    n: u64,
    seed: u64,
}

fn mean_se(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let m = sum / n;
    (m, ((sum_sq / n - m * m).max(0.0) / n).sqrt())
}

fn assemble(
    params: &ModelParams,
    target: &Target,
    n_steps: usize,
    tilt: &Tilt,
    sampling: &Sampling,
    sums: &Sums,
    ess: Option<f64>,
) -> Result<ProbabilityEstimate> {
    let c = &sums.counts;
    if c.sojourn > c.ruin || c.simultaneous > c.ruin || c.ruin > c.first_coordinate {
        return Err(Error::Logic(format!("counter dominance violated: {c:?}")));
    }
    let n = sampling.n as f64;
    let label = if tilt.is_zero() { "naive" } else { "tilted" };
    let make = |quantity: &str, sum: f64, sum_sq: f64| -> Result<EstimatorResult> {
        let (m, se) = mean_se(sum, sum_sq, n);
        let hash = config_hash(&McHash {
            estimator: label,
            quantity,
            params,
            target,
            n_steps,
            tilt,
            n: sampling.n,
            seed: sampling.seed,
        })?;
        let mut r = EstimatorResult::new(m, se, sampling.n, sampling.seed, hash);
        r.horizon = Some(1.0);
        r.n_steps = Some(n_steps);
        r.ess = ess;
        if let Some(e) = ess {
            if e < MIN_ESS {
                r.warnings.push(format!("effective sample size {e:.1} is below {MIN_ESS}"));
            }
        }
        r.checked()
    };
    let pi_hat = make("pi", sums.w[0], sums.w[1])?;
    let s_hat = make("s", sums.w[2], sums.w[3])?;
    let pi_bar = make("pi_bar", sums.w[4], sums.w[5])?;
    let first_coordinate = make("first", sums.w[6], sums.w[7])?;
    let ratio = if c.ruin == 0 || sums.w[0] <= 0.0 {
        RatioOutcome::NoData {
            message: format!(
                "no ruin observed among {} paths at u = {}; increase n or lower u",
                sampling.n, target.u
            ),
        }
    } else {
        let r = sums.w[2] / sums.w[0];
        // Delta method for Σw1s / Σw1π with 1s ⊂ 1π:
        // Var ≈ (E[w²1s](1 − 2r) + r² E[w²1π]) / (n π̂²).
        let pi = sums.w[0] / n;
        let var = (sums.w[3] / n * (1.0 - 2.0 * r) + r * r * sums.w[1] / n) / (n * pi * pi);
        let se = var.max(0.0).sqrt();
        let mut res = make("ratio", 0.0, 0.0)?;
        res.estimate = r;
        res.stderr = se;
        let res = res.checked()?;
        RatioOutcome::Estimate { lo: (r - Z95 * se).max(0.0), hi: (r + Z95 * se).min(1.0), result: res }
    };
    Ok(ProbabilityEstimate {
        u: target.u,
        budget: target.budget.at(target.u)?,
        n_steps,
        pi_hat,
        s_hat,
        ratio,
        pi_bar,
        first_coordinate,
        counts: *c,
    })
}

fn check_inputs(params: &ModelParams, targets: &[Target], n_steps: usize, sampling: &Sampling) -> Result<()> {
    params.validate()?;
    check_grid(1.0, n_steps)?;
    if sampling.n < MIN_PATHS {
        return Err(Error::Precondition(format!("at least {MIN_PATHS} paths are required, got {}", sampling.n)));
    }
    if targets.is_empty() {
        return Err(Error::Config("no capital levels given".into()));
    }
    for t in targets {
        t.budget.at(t.u)?;
    }
    Ok(())
}

/// Naive estimates for several targets on one set of paths.
pub fn estimate_targets(params: &ModelParams, targets: &[Target], n_steps: usize, sampling: &Sampling) -> Result<Vec<ProbabilityEstimate>> {
    check_inputs(params, targets, n_steps, sampling)?;
    let tilt = Tilt::zero();
    let batch = simulate_targets(params, targets, n_steps, &tilt, sampling)?;
    targets
        .iter()
        .zip(&batch.sums)
        .map(|(t, s)| assemble(params, t, n_steps, &tilt, sampling, s, None))
        .collect()
}

/// Naive estimates of `π̂`, `ŝ` and their ratio at capital `u`.
pub fn estimate_probabilities(
    params: &ModelParams,
    u: f64,
    budget: &SojournBudget,
    n_steps: usize,
    sampling: &Sampling,
) -> Result<ProbabilityEstimate> {
    if let Some(bu) = budget.u {
        if bu != u {
            return Err(Error::Config(format!("budget is attached to u = {bu}, not {u}")));
        }
    }
    let target = Target { u, budget: SojournBudget { u: None, ..*budget } };
    Ok(estimate_targets(params, &[target], n_steps, sampling)?.remove(0))
}

/// Importance-sampled estimates under `tilt`, reweighted by the exact
/// likelihood ratio of the Gaussian increments.
pub fn tilted_estimate_with(
    params: &ModelParams,
    u: f64,
    budget: &SojournBudget,
    n_steps: usize,
    tilt: &Tilt,
    sampling: &Sampling,
) -> Result<ProbabilityEstimate> {
    let target = Target { u, budget: SojournBudget { u: None, ..*budget } };
    check_inputs(params, &[target], n_steps, sampling)?;
    let batch = simulate_targets(params, &[target], n_steps, tilt, sampling)?;
    let s = &batch.sums[0];
    // Effective sample size of the ruin-weighted sample.
    let ess = if s.w[1] > 0.0 { s.w[0] * s.w[0] / s.w[1] } else { 0.0 };
    assemble(params, &target, n_steps, tilt, sampling, s, if tilt.is_zero() { None } else { Some(ess) })
}

/// Importance-sampled estimates tilted toward the rate minimizer at `u`.
pub fn tilted_estimate(
    params: &ModelParams,
    u: f64,
    budget: &SojournBudget,
    n_steps: usize,
    sampling: &Sampling,
) -> Result<ProbabilityEstimate> {
    let tilt = Tilt::toward_minimizer(params, u)?;
    tilted_estimate_with(params, u, budget, n_steps, &tilt, sampling)
}

/// One-dimensional ruin frequencies `P(max_k B(t_k) − c·t_k > u)` for several
/// `(c, u)` pairs, all read off the same driftless paths on `[0, horizon]`.
pub fn one_dim_frequencies(pairs: &[(f64, f64)], horizon: f64, n_steps: usize, sampling: &Sampling) -> Result<Vec<EstimatorResult>> {
    check_grid(horizon, n_steps)?;
    if pairs.is_empty() {
        return Err(Error::Config("no (c, u) pairs given".into()));
    }
    let dt = horizon / n_steps as f64;
    let seed = sampling.seed;
    let times: Vec<f64> = (0..n_steps).map(|k| k as f64 * dt).collect();
    let counts = run_batches(
        sampling,
        |range| {
            // Paths are generated block by block (the same increments as
            // `fill_drifted` with zero drift) so the scans stay in cache.
            const BLOCK: usize = 512;
            let sd = dt.sqrt();
            let mut block = [0.0; BLOCK];
            let mut best = vec![f64::NEG_INFINITY; pairs.len()];
            let mut hits = vec![0u64; pairs.len()];
            for i in range {
                let mut rng = path_rng(seed, StreamDomain::Increments, i);
                best.iter_mut().for_each(|b| *b = f64::NEG_INFINITY);
                let mut x = 0.0;
                for k0 in (0..n_steps).step_by(BLOCK) {
                    let len = BLOCK.min(n_steps - k0);
                    for v in &mut block[..len] {
                        *v = x;
                        let z: f64 = rng.sample(StandardNormal);
                        x += sd * z;
                    }
                    for (b, &(c, _)) in best.iter_mut().zip(pairs) {
                        *b = b.max(max_drifted(&block[..len], &times[k0..k0 + len], c));
                    }
                }
                for ((h, &b), &(_, u)) in hits.iter_mut().zip(&best).zip(pairs) {
                    *h += (b > u) as u64;
                }
            }
            hits
        },
        |acc, part| {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        },
    )?;
    let n = sampling.n as f64;
    pairs
        .iter()
        .zip(counts)
        .map(|(&(c, u), k)| {
            let p = k as f64 / n;
            let hash = config_hash(&serde_json::json!({
                "estimator": "one_dim", "c": c, "u": u, "horizon": horizon,
                "n_steps": n_steps, "n": sampling.n, "seed": sampling.seed,
            }))?;
            let mut r = EstimatorResult::new(p, (p * (1.0 - p) / n).sqrt(), sampling.n, sampling.seed, hash);
            r.horizon = Some(horizon);
            r.n_steps = Some(n_steps);
            r.checked()
        })
        .collect()
}

/// `max_k values[k] − c·times[k]`, as a branch-free reduction the compiler
/// can vectorize.
fn max_drifted(values: &[f64], times: &[f64], c: f64) -> f64 {
    const LANES: usize = 4;
    let mut m = [f64::NEG_INFINITY; LANES];
    let (vc, vr) = values.split_at(values.len() / LANES * LANES);
    let (tc, tr) = times.split_at(vc.len());
    for (v, t) in vc.chunks_exact(LANES).zip(tc.chunks_exact(LANES)) {
        for j in 0..LANES {
            let y = v[j] - c * t[j];
            m[j] = if y > m[j] { y } else { m[j] };
        }
    }
    let mut best = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (v, t) in vr.iter().zip(tr) {
        best = best.max(v - c * t);
    }
    best
}

/// `|frequency − exact| ≤ 3·stderr + allowance` for the first coordinate.
pub fn marginal_check(est: &ProbabilityEstimate, c1: f64, allowance: f64) -> Result<(bool, f64)> {
    let exact = one_dim_ruin(c1, est.u, 1.0)?;
    let f = &est.first_coordinate;
    Ok(((f.estimate - exact).abs() <= 3.0 * f.stderr + allowance, exact))
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRow {
    pub u: f64,
    pub pi_hat: f64,
    pub pi_se: f64,
    pub s_hat: f64,
    pub s_se: f64,
    pub ratio: Option<f64>,
    pub ratio_lo: Option<f64>,
    pub ratio_hi: Option<f64>,
    pub limit: Option<f64>,
    pub limit_se: Option<f64>,
    pub regime: String,
    /// `ratio − limit`.
    pub gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_data: Option<String>,
    pub counts: Counts,
}

/// Ratios at increasing capital levels next to their asymptotic limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeTable {
    pub params: ModelParams,
    pub s1: f64,
    pub s2: f64,
    pub n: u64,
    pub seed: u64,
    pub n_steps: usize,
    pub config_hash: String,
    pub rows: Vec<ConvergeRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitResult>,
}

impl ConvergeTable {
    pub const CSV_HEADER: &'static str = "u,pi_hat,pi_se,s_hat,s_se,ratio,ratio_lo,ratio_hi,limit,regime";

    /// CSV with 17 significant digits; missing values are empty cells.
    pub fn to_csv(&self) -> String {
        let f = |x: f64| format!("{x:.16e}");
        let o = |x: Option<f64>| x.map(f).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                f(r.u),
                f(r.pi_hat),
                f(r.pi_se),
                f(r.s_hat),
                f(r.s_se),
                o(r.ratio),
                o(r.ratio_lo),
                o(r.ratio_hi),
                o(r.limit),
                r.regime
            ));
        }
        out
    }

    /// Whether `|gap|` strictly decreases along the rows (rows without a
    /// ratio or limit make the trend undefined).
    pub fn gap_trend_monotone(&self) -> Option<bool> {
        let gaps: Option<Vec<f64>> = self.rows.iter().map(|r| r.gap.map(f64::abs)).collect();
        gaps.map(|g| g.windows(2).all(|w| w[1] < w[0]))
    }
}

/// Evaluate the ratio at every `u` in `u_list` on one set of paths, next to
/// the asymptotic `limit` (computed by the caller for the same regime and
/// budget).
pub fn converge_table(
    params: &ModelParams,
    regime: RegimeKind,
    budget: &SojournBudget,
    u_list: &[f64],
    n_steps: usize,
    sampling: &Sampling,
    limit: Option<LimitResult>,
) -> Result<ConvergeTable> {
    if u_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("capital levels must be strictly increasing".into()));
    }
    let targets: Vec<Target> =
        u_list.iter().map(|&u| Target { u, budget: SojournBudget { u: None, ..*budget } }).collect();
    let est = estimate_targets(params, &targets, n_steps, sampling)?;
    let (lim, lim_se) = match &limit {
        Some(l) => (Some(l.value), Some(l.stderr)),
        None => (None, None),
    };
    let rows = est
        .iter()
        .map(|e| {
            let ratio = e.ratio.value();
            let interval = e.ratio.interval();
            ConvergeRow {
                u: e.u,
                pi_hat: e.pi_hat.estimate,
                pi_se: e.pi_hat.stderr,
                s_hat: e.s_hat.estimate,
                s_se: e.s_hat.stderr,
                ratio,
                ratio_lo: interval.map(|i| i.0),
                ratio_hi: interval.map(|i| i.1),
                limit: lim,
                limit_se: lim_se,
                regime: regime.name().to_string(),
                gap: ratio.zip(lim).map(|(r, l)| r - l),
                no_data: match &e.ratio {
                    RatioOutcome::NoData { message } => Some(message.clone()),
                    _ => None,
                },
                counts: e.counts,
            }
        })
        .collect();
    let config_hash = config_hash(&serde_json::json!({
        "estimator": "converge", "params": params, "s1": budget.s1, "s2": budget.s2,
        "u_list": u_list, "n_steps": n_steps, "n": sampling.n, "seed": sampling.seed,
    }))?;
    Ok(ConvergeTable {
        params: *params,
        s1: budget.s1,
        s2: budget.s2,
        n: sampling.n,
        seed: sampling.seed,
        n_steps,
        config_hash,
        rows,
        limit,
    })
}
