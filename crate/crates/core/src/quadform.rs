//! The large-deviation rate of joint ruin.
//!
//! For a barrier vector `𝐚` and times `(s, t)`, `q_𝐚(s,t) = 𝐚ᵀ Σ⁻¹_{s,t} 𝐚`.
//! The rate that governs `log P(∃ s,t: W₁*(s) > u, W₂*(t) > au) ~ −u² q*/2` is
//! the constrained minimum `q*_𝐚(s,t) = min_{𝐱 ≥ 𝐚} q_𝐱(s,t)`, minimized
//! again over `(s,t) ∈ [0,1]²`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gauss::BivCovariance;
use crate::model::ModelParams;

/// Default grid resolution for [`q_star_global`].
pub const DEFAULT_GRID: usize = 256;

/// Covariance at `(s, t)` together with the barrier vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateInput {
    pub sigma: BivCovariance,
    pub avec: [f64; 2],
    /// `None` for the asymptotic barrier `(1, a)`, `Some(u)` when the drift
    /// correction `(1 + c₁s/u, a + c₂t/u)` is included.
    pub u: Option<f64>,
}

impl RateInput {
    /// Barrier vector at capital `u` (`None` = the `u → ∞` limit).
    pub fn new(params: &ModelParams, s: f64, t: f64, u: Option<f64>) -> Result<Self> {
        let sigma = BivCovariance::new(s, t, params.rho)?;
        let avec = match u {
            None => [1.0, params.a],
            Some(u) if u > 0.0 && u.is_finite() => {
                [1.0 + params.c1 * s / u, params.a + params.c2 * t / u]
            }
            Some(u) => return domain(format!("capital must be positive, got {u}")),
        };
        Ok(RateInput { sigma, avec, u })
    }

    pub fn with_vector(sigma: BivCovariance, avec: [f64; 2]) -> Result<Self> {
        if !(avec[0].is_finite() && avec[1].is_finite()) {
            return domain("barrier vector must be finite");
        }
        Ok(RateInput { sigma, avec, u: None })
    }
}

/// `(q, 𝐛) = (𝐚ᵀΣ⁻¹𝐚, Σ⁻¹𝐚)`.
pub fn q_value(input: &RateInput) -> Result<(f64, [f64; 2])> {
    if input.sigma.det() <= 0.0 {
        return domain("degenerate covariance");
    }
    Ok((input.sigma.quad(input.avec), input.sigma.solve(input.avec)))
}

/// Which constraints of `𝐱 ≥ 𝐚` bind at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveSet {
    Both,
    First,
    Second,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub value: f64,
    pub x: [f64; 2],
    pub active: ActiveSet,
}

/// `min_{𝐱 ≥ 𝐚} 𝐱ᵀΣ⁻¹𝐱` by enumeration of the four active sets.
///
/// Each face has a closed-form minimizer (on the face where only `xᵢ = aᵢ`
/// binds, the free coordinate sits at its conditional mean `Σⱼᵢ/Σᵢᵢ · aᵢ`).
/// The problem is convex, so the best feasible face minimizer is optimal.
pub fn q_star_solution(input: &RateInput) -> Result<QpSolution> {
    let (q_both, _) = q_value(input)?;
    let [a1, a2] = input.avec;
    let sig = &input.sigma;
    let c = sig.cross();
    let mut best = QpSolution { value: q_both, x: [a1, a2], active: ActiveSet::Both };

    let x2 = c / sig.s() * a1;
    if x2 >= a2 {
        let v = a1 * a1 / sig.s();
        if v < best.value {
            best = QpSolution { value: v, x: [a1, x2], active: ActiveSet::First };
        }
    }
    let x1 = c / sig.t() * a2;
    if x1 >= a1 {
        let v = a2 * a2 / sig.t();
        if v < best.value {
            best = QpSolution { value: v, x: [x1, a2], active: ActiveSet::Second };
        }
    }
    if a1 <= 0.0 && a2 <= 0.0 {
        best = QpSolution { value: 0.0, x: [0.0, 0.0], active: ActiveSet::None };
    }
    Ok(best)
}

/// `q*_𝐚(s,t)`.
pub fn q_star_point(input: &RateInput) -> Result<f64> {
    Ok(q_star_solution(input)?.value)
}

/// Global minimum of `q*` over `[δ,1]²` and its minimizer(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMin {
    pub value: f64,
    pub minimizers: Vec<(f64, f64)>,
}

/// Minimize `q*_𝐚(s,t)` over `[δ,1]²`, `δ = 1/grid_n`.
///
/// A grid pass finds the near-minimal basins (connected components of the
/// sublevel set `q* ≤ min + 10⁻³(1 + min)`); each basin is then refined by a
/// compass search whose step halves until it drops below `1e−10`. Refined
/// points within `1e−8` of the best value are returned, merged when closer
/// than `1e−6`. Ties inside a basin resolve toward `(1,1)`.
pub fn q_star_global(params: &ModelParams, u: Option<f64>, grid_n: usize) -> Result<GlobalMin> {
    params.validate()?;
    if grid_n < 64 {
        return domain(format!("grid_n must be >= 64, got {grid_n}"));
    }
    let h = 1.0 / grid_n as f64;
    let eval = |s: f64, t: f64| -> Result<f64> { q_star_point(&RateInput::new(params, s, t, u)?) };

    // values[i][j] at (s, t) = ((i+1)h, (j+1)h)
    let n = grid_n;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = eval((i + 1) as f64 * h, (j + 1) as f64 * h)?;
        }
    }
    let grid_min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = grid_min + 1e-3 * (1.0 + grid_min.abs());

    let mut label = vec![usize::MAX; n * n];
    let mut reps: Vec<(usize, usize)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n * n {
        if values[start] > threshold || label[start] != usize::MAX {
            continue;
        }
        let id = reps.len();
        label[start] = id;
        stack.push(start);
        let mut best = start;
        while let Some(k) = stack.pop() {
            let (i, j) = (k / n, k % n);
            // lower value wins; ties go to the larger (s, t)
            if values[k] < values[best] || (values[k] == values[best] && k > best) {
                best = k;
            }
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                        continue;
                    }
                    let nk = ni as usize * n + nj as usize;
                    if label[nk] == usize::MAX && values[nk] <= threshold {
                        label[nk] = id;
                        stack.push(nk);
                    }
                }
            }
        }
        reps.push((best / n, best % n));
    }

    let mut refined = Vec::with_capacity(reps.len());
    for (i, j) in reps {
        let start = ((i + 1) as f64 * h, (j + 1) as f64 * h);
        refined.push(compass_refine(&eval, start, h, h)?);
    }
    let best_value = refined.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    refined.retain(|r| r.2 <= best_value + 1e-8);
    refined.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut minimizers: Vec<(f64, f64)> = Vec::new();
    for (s, t, _) in refined {
        if minimizers.iter().all(|&(ms, mt)| (ms - s).hypot(mt - t) > 1e-6) {
            minimizers.push((s, t));
        }
    }
    minimizers.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    Ok(GlobalMin { value: best_value, minimizers })
}

fn compass_refine<F>(f: &F, start: (f64, f64), step0: f64, lo: f64) -> Result<(f64, f64, f64)>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    const DIRS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
        (-1.0, -1.0),
    ];
    let (mut s, mut t) = start;
    let mut v = f(s, t)?;
    let mut step = step0;
    while step >= 1e-10 {
        let mut best = (s, t, v);
        for (ds, dt) in DIRS {
            let ns = (s + ds * step).clamp(lo, 1.0);
            let nt = (t + dt * step).clamp(lo, 1.0);
            if ns == s && nt == t {
                continue;
            }
            let nv = f(ns, nt)?;
            if nv < best.2 {
                best = (ns, nt, nv);
            }
        }
        if best.2 < v {
            (s, t, v) = best;
        } else {
            step *= 0.5;
        }
    }
    Ok((s, t, v))
}

/// Decay exponent `q*_𝐚 / 2` of the joint ruin probability on the `u²` scale.
///
/// The sign convention is positive: `log P ≈ −u² · log_rate`.
pub fn log_rate(params: &ModelParams) -> Result<f64> {
    Ok(q_star_global(params, None, DEFAULT_GRID)?.value / 2.0)
}
