//! Brownian paths on a uniform grid and their occupation functionals.
//!
//! Conventions used everywhere in the crate:
//!
//! * a grid path has `n_steps + 1` values at `t_k = k·dt`, starting at 0;
//! * occupation is the left-endpoint Riemann sum over the monitoring points
//!   `k = 0..n_steps` (the final value is not monitored);
//! * "crossed" means some monitored value is strictly above the level, so a
//!   zero budget reproduces the crossing event exactly.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::SojournBudget;
use crate::rng::{path_rng, PathRng, StreamDomain};

/// A drifted Brownian path sampled on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub horizon: f64,
    pub n_steps: usize,
    pub values: Vec<f64>,
}

impl PathGrid {
    pub fn new(horizon: f64, values: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return domain(format!("horizon must be positive, got {horizon}"));
        }
        if values.len() < 3 {
            return domain("a path needs at least two steps");
        }
        if values[0] != 0.0 {
            return domain("paths start at 0");
        }
        Ok(PathGrid { horizon, n_steps: values.len() - 1, values })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// The monitored values `values[0..n_steps]`.
    pub fn monitored(&self) -> &[f64] {
        &self.values[..self.n_steps]
    }

    /// Maximum over the monitored values.
    pub fn grid_sup(&self) -> f64 {
        self.monitored().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `(W₁ − c₁t, W₂ − c₂t)` with `W₂ = ρB₁ + √(1−ρ²)B₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPair {
    pub w1: PathGrid,
    pub w2: PathGrid,
    pub rho: f64,
}

pub(crate) fn check_grid(horizon: f64, n_steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    if n_steps < 2 {
        return domain(format!("n_steps must be >= 2, got {n_steps}"));
    }
    Ok(())
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(rho > -1.0 && rho < 1.0) {
        return domain(format!("correlation must lie in (-1,1), got {rho}"));
    }
    Ok(())
}

/// Draws the Gaussian increments of a correlated pair, two normals per step
/// (`B₁` then `B₂`). Shared by every simulator so a given `(seed, index)`
/// always produces the same pair.
pub(crate) struct PairStepper {
    rng: PathRng,
    sd: f64,
    rho: f64,
    rho_bar: f64,
    drift1: f64,
    drift2: f64,
}

impl PairStepper {
    pub(crate) fn new(seed: u64, index: u64, rho: f64, c1: f64, c2: f64, dt: f64) -> Self {
        PairStepper {
            rng: path_rng(seed, StreamDomain::Increments, index),
            sd: dt.sqrt(),
            rho,
            rho_bar: (1.0 - rho * rho).sqrt(),
            drift1: -c1 * dt,
            drift2: -c2 * dt,
        }
    }

    /// Next `(ΔB₁, ΔB₂)` as standard normals scaled by `√dt`.
    #[inline(always)]
    pub(crate) fn driver(&mut self) -> (f64, f64) {
        let z1: f64 = self.rng.sample(StandardNormal);
        let z2: f64 = self.rng.sample(StandardNormal);
        (self.sd * z1, self.sd * z2)
    }

    /// Next `(ΔW₁*, ΔW₂*)`.
    #[inline(always)]
    pub(crate) fn step(&mut self) -> (f64, f64) {
        let (d1, d2) = self.driver();
        (d1 + self.drift1, self.rho * d1 + self.rho_bar * d2 + self.drift2)
    }

}

/// Simulate one correlated pair (path index 0 of `seed`).
pub fn simulate_pair(rho: f64, c1: f64, c2: f64, horizon: f64, n_steps: usize, seed: u64) -> Result<PathPair> {
    simulate_pair_indexed(rho, c1, c2, horizon, n_steps, seed, 0)
}

/// Simulate path `index` of the stream family keyed by `seed`.
pub fn simulate_pair_indexed(
    rho: f64,
    c1: f64,
    c2: f64,
    horizon: f64,
    n_steps: usize,
    seed: u64,
    index: u64,
) -> Result<PathPair> {
    check_rho(rho)?;
    check_grid(horizon, n_steps)?;
    let dt = horizon / n_steps as f64;
    let mut stepper = PairStepper::new(seed, index, rho, c1, c2, dt);
    let mut v1 = Vec::with_capacity(n_steps + 1);
    let mut v2 = Vec::with_capacity(n_steps + 1);
    let (mut x1, mut x2) = (0.0, 0.0);
    v1.push(0.0);
    v2.push(0.0);
    for _ in 0..n_steps {
        let (d1, d2) = stepper.step();
        x1 += d1;
        x2 += d2;
        v1.push(x1);
        v2.push(x2);
    }
    Ok(PathPair {
        w1: PathGrid { horizon, n_steps, values: v1 },
        w2: PathGrid { horizon, n_steps, values: v2 },
        rho,
    })
}

/// Fill `out` (length `n_steps + 1`) with `B(t) − c·t` for path `index`.
/// One normal per step from the increment stream.
pub(crate) fn fill_drifted(out: &mut [f64], c: f64, dt: f64, seed: u64, index: u64) {
    let mut rng = path_rng(seed, StreamDomain::Increments, index);
    let sd = dt.sqrt();
    let drift = -c * dt;
    let mut x = 0.0;
    out[0] = 0.0;
    for v in out.iter_mut().skip(1) {
        let z: f64 = rng.sample(StandardNormal);
        x += sd * z + drift;
        *v = x;
    }
}

/// Simulate a single drifted path `B(t) − c·t`.
pub fn simulate_drifted(c: f64, horizon: f64, n_steps: usize, seed: u64, index: u64) -> Result<PathGrid> {
    check_grid(horizon, n_steps)?;
    let mut values = vec![0.0; n_steps + 1];
    fill_drifted(&mut values, c, horizon / n_steps as f64, seed, index);
    Ok(PathGrid { horizon, n_steps, values })
}

/// Smallest number of monitored points above a level that makes the
/// occupation `count·dt` strictly exceed `s`.
pub fn required_count(s: f64, dt: f64) -> usize {
    let mut m = (s / dt).floor().max(0.0) as usize;
    while m > 0 && (m as f64) * dt > s {
        m -= 1;
    }
    while (m as f64) * dt <= s {
        m += 1;
    }
    m
}

/// Occupation time above `level`: `dt · #{k < n_steps : values[k] > level}`.
pub fn sojourn_time(path: &PathGrid, level: f64) -> f64 {
    path.monitored().iter().filter(|&&v| v > level).count() as f64 * path.dt()
}

/// Occupation quantile `ξ_S`: the `required_count(S)`-th largest monitored
/// value. `{x : sojourn(x) > S} = (−∞, ξ_S)`, so `∫ 1(sojourn(x) > S) e^{wx} dx
/// = e^{wξ_S}/w`.
pub fn level_quantile(path: &PathGrid, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return domain(format!("budget must be >= 0, got {s}"));
    }
    if s >= path.horizon {
        return domain(format!("budget {s} is not below the horizon {}", path.horizon));
    }
    let m = required_count(s, path.dt());
    let mut scratch = path.monitored().to_vec();
    Ok(kth_largest(&mut scratch, m))
}

/// The `m`-th largest (1-based) element; reorders `values`.
pub(crate) fn kth_largest(values: &mut [f64], m: usize) -> f64 {
    debug_assert!(m >= 1 && m <= values.len());
    if m == 1 {
        return values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    let (_, v, _) = values.select_nth_unstable_by(m - 1, |a, b| b.total_cmp(a));
    *v
}

/// Occupation quantiles for several required counts at once, sharing one
/// partial sort. Counts larger than the number of values give `−∞`.
pub(crate) fn quantiles_for_counts(values: &mut [f64], counts: &[usize], out: &mut [f64]) {
    let max_m = counts.iter().copied().max().unwrap_or(1).min(values.len());
    if max_m <= 1 {
        let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (o, &m) in out.iter_mut().zip(counts) {
            *o = if m <= values.len() { top } else { f64::NEG_INFINITY };
        }
        return;
    }
    values.select_nth_unstable_by(max_m - 1, |a, b| b.total_cmp(a));
    let head = &mut values[..max_m];
    head.sort_unstable_by(|a, b| b.total_cmp(a));
    for (o, &m) in out.iter_mut().zip(counts) {
        *o = if m >= 1 && m <= max_m { head[m - 1] } else { f64::NEG_INFINITY };
    }
}

/// Sample the maximum of a Brownian bridge from `x0` to `x1` over an
/// interval of length `dt`, given a uniform `v ∈ (0,1)`.
#[inline]
pub(crate) fn bridge_max(x0: f64, x1: f64, dt: f64, v: f64) -> f64 {
    let d = x1 - x0;
    0.5 * (x0 + x1 + (d * d - 2.0 * dt * v.ln()).sqrt())
}

/// Continuous supremum over `[0, horizon]` of the Brownian interpolation of
/// `values`: the largest of the exact bridge maxima of all grid intervals,
/// driven by one auxiliary uniform per interval.
pub(crate) fn bridge_sup<R: Rng>(values: &[f64], dt: f64, rng: &mut R) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for w in values.windows(2) {
        // 1 − U lies in (0, 1], so the logarithm is finite.
        let v = 1.0 - rng.random::<f64>();
        best = best.max(bridge_max(w[0], w[1], dt, v));
    }
    best
}

/// Crossing and sojourn indicators of a pair against barriers `(u, a·u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuinIndicators {
    pub ruin1: bool,
    pub ruin2: bool,
    pub soj1_ok: bool,
    pub soj2_ok: bool,
}

pub fn ruin_indicators(pair: &PathPair, u: f64, a: f64, budget: &SojournBudget) -> Result<RuinIndicators> {
    match budget.u {
        Some(bu) if bu == u => {}
        _ => return Err(Error::Config(format!("budget capital {:?} does not match u = {u}", budget.u))),
    }
    let (h1, h2) = budget.scaled()?;
    let dt = pair.w1.dt();
    let n1 = pair.w1.monitored().iter().filter(|&&v| v > u).count();
    let n2 = pair.w2.monitored().iter().filter(|&&v| v > a * u).count();
    Ok(RuinIndicators {
        ruin1: n1 > 0,
        ruin2: n2 > 0,
        soj1_ok: n1 >= required_count(h1, dt),
        soj2_ok: n2 >= required_count(h2, dt),
    })
}

/// Write paths as little-endian binary: `horizon: f64`, `n_steps: u64`,
/// `count: u64`, then `count × (n_steps + 1)` values as `f64`.
pub fn write_paths<W: Write>(mut w: W, paths: &[PathGrid]) -> Result<()> {
    let first = paths.first().ok_or_else(|| Error::Config("no paths to write".into()))?;
    if paths.iter().any(|p| p.n_steps != first.n_steps || p.horizon != first.horizon) {
        return Err(Error::Config("paths in one dump must share horizon and n_steps".into()));
    }
    w.write_all(&first.horizon.to_le_bytes())?;
    w.write_all(&(first.n_steps as u64).to_le_bytes())?;
    w.write_all(&(paths.len() as u64).to_le_bytes())?;
    for p in paths {
        for v in &p.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_paths<R: Read>(mut r: R) -> Result<Vec<PathGrid>> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let horizon = f64::from_le_bytes(buf);
    r.read_exact(&mut buf)?;
    let n_steps = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let count = u64::from_le_bytes(buf) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Vec::with_capacity(n_steps + 1);
        for _ in 0..=n_steps {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        out.push(PathGrid { horizon, n_steps, values });
    }
    Ok(out)
}
