//! Shared Monte Carlo plumbing: result records, configuration fingerprints,
//! moment accumulators and the deterministic batch runner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Version string mixed into every configuration fingerprint, so results
/// produced by a different build never collide in a cache.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

/// Paths per batch. Batches are the unit of parallel work; their partial
/// results are merged in batch order, so the outcome does not depend on the
/// number of worker threads.
pub const BATCH: u64 = 4096;

/// Exponents above this are clamped and counted as tail loss.
pub const EXP_CLAMP: f64 = 700.0;

/// One fitted window of a windowed (Δ-indexed) estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub delta: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// A Monte Carlo estimate together with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    /// Number of samples whose exponent hit [`EXP_CLAMP`]. Nonzero
    /// invalidates the estimate.
    #[serde(default)]
    pub tail_loss: u64,
    /// Effective sample size, for weighted estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub windows: Vec<WindowPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EstimatorResult {
    pub fn new(estimate: f64, stderr: f64, n: u64, seed: u64, config_hash: String) -> Self {
        EstimatorResult {
            estimate,
            stderr,
            n,
            seed,
            config_hash,
            horizon: None,
            n_steps: None,
            tail_loss: 0,
            ess: None,
            windows: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Check the record's invariants; a violation is an internal error.
    pub fn checked(self) -> Result<Self> {
        if !self.estimate.is_finite() || !(self.stderr >= 0.0) {
            return Err(Error::Logic(format!(
                "estimator produced estimate {} with stderr {}",
                self.estimate, self.stderr
            )));
        }
        Ok(self)
    }

    /// Whether the run is usable: no exponent was clamped.
    pub fn is_valid(&self) -> bool {
        self.tail_loss == 0
    }
}

/// Sample size, seed and thread count of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub n: u64,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool. Never affects results.
    #[serde(skip)]
    pub workers: usize,
}

impl Sampling {
    pub fn new(n: u64, seed: u64) -> Self {
        Sampling { n, seed, workers: 0 }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Sampling { workers, ..self }
    }
}

/// SHA-256 of the canonical JSON of `config` together with [`CODE_VERSION`].
/// Object keys are sorted by `serde_json`'s default map, so the serialization
/// is stable.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let canonical = serde_json::json!({ "code": CODE_VERSION, "config": value });
    let digest = Sha256::digest(serde_json::to_vec(&canonical)?);
    Ok(hex::encode(digest))
}

/// Running sums for a fixed number of jointly observed quantities, including
/// all cross products (needed for ratio standard errors).
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: Vec<f64>,
    /// Row-major `dim × dim` sums of products.
    pub cross: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Moments { count: 0, sum: vec![0.0; dim], cross: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    #[inline]
    pub fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        self.count += 1;
        for i in 0..d {
            self.sum[i] += x[i];
            for j in 0..d {
                self.cross[i * d + j] += x[i] * x[j];
            }
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.count as f64
    }

    /// Unbiased sample covariance of components `i` and `j`.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return 0.0;
        }
        let d = self.dim();
        let c = (self.cross[i * d + j] - self.sum[i] * self.sum[j] / n) / (n - 1.0);
        if i == j {
            c.max(0.0)
        } else {
            c
        }
    }

    /// Standard error of the mean of component `i`.
    pub fn stderr(&self, i: usize) -> f64 {
        (self.cov(i, i) / self.count as f64).sqrt()
    }
}

/// Run `job` over the path indices `0..n` in fixed batches of [`BATCH`] and
/// fold the per-batch results in batch order with `merge`.
///
/// The batch layout depends only on `n`, and each path draws from its own
/// stream, so the result is bit-identical for every worker count.
pub fn run_batches<A, F, M>(sampling: &Sampling, job: F, mut merge: M) -> Result<A>
where
    A: Send,
    F: Fn(std::ops::Range<u64>) -> A + Sync + Send,
    M: FnMut(&mut A, A),
{
    let n = sampling.n;
    if n == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let batches = n.div_ceil(BATCH);
    let work = || -> Vec<A> {
        (0..batches)
            .into_par_iter()
            .map(|b| job(b * BATCH..((b + 1) * BATCH).min(n)))
            .collect()
    };
    let parts = if sampling.workers == 0 {
        work()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(sampling.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(work)
    };
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one batch");
    for part in it {
        merge(&mut acc, part);
    }
    Ok(acc)
}

/// `exp(x)` with `x` clamped at [`EXP_CLAMP`]; bumps `lost` when clamping.
#[inline]
pub(crate) fn guarded_exp(x: f64, lost: &mut u64) -> f64 {
    if x > EXP_CLAMP {
        *lost += 1;
        EXP_CLAMP.exp()
    } else {
        x.exp()
    }
}
