//! Command-line front end: argument parsing, result cache and output
//! formatting for the `ruinlab` library.
//!
//! [`run`] executes one command line and returns the process exit code:
//! 0 on success, 1 on usage, domain or configuration errors, and 2 on an
//! internal logic error. Results go to standard output as JSON with every
//! float written to 17 significant digits; tables additionally go to a CSV
//! file named by `--out`.

pub mod cache;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

use ruinlab::asymptotics::{
    fill_table, limit_theorem21, limit_theorem22, required_constants, ConstantTable, EvalOptions, LimitMode,
    LimitResult, RatioEntry,
};
use ruinlab::constants::{estimate, estimate_budget_ratio, ConstantSpec, PathOptions, RatioEstimate, WindowOptions};
use ruinlab::estimate::{config_hash, EstimatorResult, Sampling};
use ruinlab::mc::{converge_table, estimate_probabilities, tilted_estimate, ProbabilityEstimate};
use ruinlab::model::{classify, force_regime, regime_record, ModelParams, Regime, RegimeKind, SojournBudget};
use ruinlab::paths::{simulate_pair_indexed, write_paths};
use ruinlab::quadform::q_star_global;
use ruinlab::{exact, Error, Result};

use cache::Cache;
use output::{float17, to_json17};

#[derive(Parser, Debug)]
#[command(name = "ruinlab", version, about = "Cumulative Parisian ruin in the two-dimensional Brownian risk model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify a parameter point into its asymptotic regime.
    Classify(ClassifyArgs),
    /// Exact one-dimensional finite-horizon ruin probability.
    ExactRuin(ExactRuinArgs),
    /// Minimize the constrained quadratic rate over the unit square.
    Qopt(QoptArgs),
    /// Dump simulated path pairs to a binary file.
    SimulatePaths(SimulatePathsArgs),
    /// Estimate one sojourn constant.
    Constant(ConstantArgs),
    /// Evaluate the asymptotic limit of the conditional sojourn probability.
    Limit(LimitArgs),
    /// Monte Carlo estimate of the conditional sojourn probability at one capital level.
    McRatio(McRatioArgs),
    /// Ratios at increasing capital levels next to their asymptotic limit.
    Converge(ConvergeArgs),
    /// Inspect or clear the result cache.
    Cache(CacheArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Correlation of the two Brownian motions.
    #[arg(long, allow_negative_numbers = true)]
    rho: f64,
    /// Second barrier relative to the first.
    #[arg(long, allow_negative_numbers = true)]
    a: f64,
    /// Premium rate of the first portfolio.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    c1: f64,
    /// Premium rate of the second portfolio.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    c2: f64,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.rho, self.a, self.c1, self.c2)
    }
}

#[derive(Args, Debug)]
struct SamplingArgs {
    /// Number of Monte Carlo samples.
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    /// Seed of the random streams.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl SamplingArgs {
    fn sampling(&self) -> Sampling {
        Sampling::new(self.n, self.seed).with_workers(self.workers)
    }
}

#[derive(Args, Debug)]
struct CacheFlags {
    /// Cache directory (default: $RUINLAB_CACHE_DIR, else .ruinlab-cache).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Neither read nor write the cache.
    #[arg(long)]
    no_cache: bool,
}

impl CacheFlags {
    fn cache(&self) -> Cache {
        Cache::resolve(self.cache_dir.as_deref(), !self.no_cache)
    }
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Distance from the boundary that still counts as equality.
    #[arg(long, default_value_t = ruinlab::model::DEFAULT_BOUNDARY_TOL)]
    tol: f64,
}

#[derive(Args, Debug)]
struct ExactRuinArgs {
    /// Drift (premium rate).
    #[arg(long, allow_negative_numbers = true)]
    c: f64,
    /// Initial capital.
    #[arg(long)]
    u: f64,
    /// Horizon.
    #[arg(long = "T")]
    horizon: f64,
}

#[derive(Args, Debug)]
struct QoptArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Capital level; without it the drift-free limit is minimized.
    #[arg(long)]
    u: Option<f64>,
    /// Grid resolution of the coarse search.
    #[arg(long, default_value_t = ruinlab::quadform::DEFAULT_GRID)]
    grid: usize,
}

#[derive(Args, Debug)]
struct SimulatePathsArgs {
    #[arg(long, allow_negative_numbers = true)]
    rho: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    c1: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    c2: f64,
    /// Horizon.
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    /// Grid steps per path.
    #[arg(long, default_value_t = 1024)]
    steps: usize,
    /// Number of path pairs.
    #[arg(long, default_value_t = 10)]
    n: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum KindArg {
    #[value(name = "P", alias = "p")]
    P,
    #[value(name = "H", alias = "h")]
    H,
    #[value(name = "R", alias = "r")]
    R,
}

#[derive(Args, Debug)]
struct DiscretizationArgs {
    /// Grid spacing for P and R.
    #[arg(long, default_value_t = 1.0 / 64.0)]
    dt: f64,
    /// Fixed horizon for P and R (default: adaptive).
    #[arg(long)]
    horizon: Option<f64>,
    /// Window lengths for H.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    delta_list: Vec<f64>,
    /// Grid steps per unit time for H.
    #[arg(long, default_value_t = 16)]
    steps_per_unit: usize,
    /// Use the grid supremum for zero budgets instead of the continuous one.
    #[arg(long)]
    grid_sup: bool,
}

impl DiscretizationArgs {
    fn paths(&self) -> PathOptions {
        PathOptions { dt: self.dt, horizon: self.horizon, bridge: !self.grid_sup }
    }

    fn windows(&self) -> WindowOptions {
        WindowOptions { deltas: self.delta_list.clone(), steps_per_unit: self.steps_per_unit, bridge: !self.grid_sup }
    }

    fn eval(&self, sampling: Sampling) -> EvalOptions {
        EvalOptions { paths: self.paths(), windows: self.windows(), sampling }
    }
}

#[derive(Args, Debug)]
struct ConstantArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    /// Budget (first component for R).
    #[arg(long, default_value_t = 0.0)]
    s: f64,
    /// Second budget component (R only; defaults to --s).
    #[arg(long)]
    s2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[command(flatten)]
    disc: DiscretizationArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    cache: CacheFlags,
}

#[derive(Args, Debug)]
struct LimitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    s1: f64,
    #[arg(long, default_value_t = 0.0)]
    s2: f64,
    /// How the dimension-reduction limit is evaluated: printed or oracle.
    #[arg(long, default_value = "oracle")]
    mode: String,
    /// Use this regime case (0 = dimension reduction, 1..=5) instead of classifying.
    #[arg(long)]
    force_case: Option<u8>,
    #[arg(long, default_value_t = ruinlab::model::DEFAULT_BOUNDARY_TOL)]
    tol: f64,
    #[command(flatten)]
    disc: DiscretizationArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    cache: CacheFlags,
}

#[derive(Args, Debug)]
struct McRatioArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Capital level.
    #[arg(long)]
    u: f64,
    #[arg(long, default_value_t = 0.0)]
    s1: f64,
    #[arg(long, default_value_t = 0.0)]
    s2: f64,
    /// Grid steps on the unit horizon.
    #[arg(long, default_value_t = 4096)]
    steps: usize,
    /// Tilt the drift toward the most likely ruin configuration.
    #[arg(long)]
    tilted: bool,
    /// Skip the rerun at twice the resolution.
    #[arg(long)]
    single_resolution: bool,
    #[arg(long, default_value_t = ruinlab::model::DEFAULT_BOUNDARY_TOL)]
    tol: f64,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// CSV output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Strictly increasing capital levels.
    #[arg(long, value_delimiter = ',', required = true)]
    u_list: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    s1: f64,
    #[arg(long, default_value_t = 0.0)]
    s2: f64,
    /// Grid steps on the unit horizon.
    #[arg(long, default_value_t = 4096)]
    steps: usize,
    #[arg(long, default_value = "oracle")]
    mode: String,
    #[arg(long)]
    force_case: Option<u8>,
    #[arg(long, default_value_t = ruinlab::model::DEFAULT_BOUNDARY_TOL)]
    tol: f64,
    /// Do not evaluate the asymptotic limit.
    #[arg(long)]
    no_limit: bool,
    /// Samples per constant behind the limit (default: --n).
    #[arg(long)]
    limit_n: Option<u64>,
    #[command(flatten)]
    disc: DiscretizationArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    cache: CacheFlags,
    /// CSV output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CacheArgs {
    #[command(subcommand)]
    action: CacheAction,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum CacheAction {
    /// List cached keys.
    List,
    /// Remove every entry.
    Clear,
    /// Print the cache directory.
    Path,
    /// Print one entry.
    Show { key: String },
}

/// Run one command line (`argv[0]` is the program name) with the process's
/// standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let replay: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &replay) {
        Ok(value) => match out.write_all(to_json17(&value).as_bytes()) {
            Ok(()) => 0,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                1
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_logic() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<Value> {
    match command {
        Command::Classify(a) => cmd_classify(&a),
        Command::ExactRuin(a) => cmd_exact_ruin(&a),
        Command::Qopt(a) => cmd_qopt(&a),
        Command::SimulatePaths(a) => cmd_simulate_paths(&a, argv),
        Command::Constant(a) => cmd_constant(&a, argv),
        Command::Limit(a) => cmd_limit(&a, argv),
        Command::McRatio(a) => cmd_mc_ratio(&a, argv),
        Command::Converge(a) => cmd_converge(&a, argv),
        Command::Cache(a) => cmd_cache(&a),
    }
}

fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    Ok(serde_json::to_value(x)?)
}

/// Common envelope of stochastic outputs: everything needed to replay the
/// run, followed by the command-specific fields.
fn envelope(
    command: &str,
    argv: &[String],
    config: &Value,
    sampling: &Sampling,
    discretization: Value,
) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert("argv".into(), json!(argv));
    m.insert("config".into(), config.clone());
    m.insert("config_hash".into(), json!(config_hash(config)?));
    m.insert("seed".into(), json!(sampling.seed));
    m.insert("n".into(), json!(sampling.n));
    m.insert("discretization".into(), discretization);
    Ok(m)
}

/// Fetch `key` from the cache or compute and store it; records hit status
/// and provenance in `m`.
fn cached<T, F>(cache: &Cache, key: &str, m: &mut Map<String, Value>, compute: F) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
    F: FnOnce() -> Result<T>,
{
    if let Some((value, provenance)) = cache.get::<T>(key) {
        m.insert("cached".into(), json!(true));
        m.insert("provenance".into(), to_value(&provenance)?);
        return Ok(value);
    }
    let value = compute()?;
    cache.put(key, &value)?;
    m.insert("cached".into(), json!(false));
    Ok(value)
}

fn regime_for(params: &ModelParams, force_case: Option<u8>, tol: f64) -> Result<Regime> {
    match force_case {
        Some(n) => force_regime(params, RegimeKind::from_case_number(n)?),
        None => classify(params, tol),
    }
}

fn cmd_classify(a: &ClassifyArgs) -> Result<Value> {
    let params = a.model.params()?;
    let regime = classify(&params, a.tol)?;
    let mut rec = regime_record(&params, &regime);
    if let Value::Object(m) = &mut rec {
        m.insert("tol".into(), json!(a.tol));
    }
    Ok(rec)
}

fn cmd_exact_ruin(a: &ExactRuinArgs) -> Result<Value> {
    let value = exact::one_dim_ruin(a.c, a.u, a.horizon)?;
    Ok(json!({ "value": value, "inputs": { "c": a.c, "u": a.u, "T": a.horizon } }))
}

fn cmd_qopt(a: &QoptArgs) -> Result<Value> {
    let params = a.model.params()?;
    let min = q_star_global(&params, a.u, a.grid)?;
    let regime = classify(&params, ruinlab::model::DEFAULT_BOUNDARY_TOL)?;
    Ok(json!({
        "q_star": min.value,
        "minimizers": min.minimizers,
        "regime": regime.kind.name(),
        "t_star": regime.t_star,
        "inputs": { "rho": a.model.rho, "a": a.model.a, "c1": a.model.c1, "c2": a.model.c2, "u": a.u, "grid": a.grid },
    }))
}

fn cmd_simulate_paths(a: &SimulatePathsArgs, argv: &[String]) -> Result<Value> {
    let sampling = Sampling::new(a.n, a.seed);
    let config = json!({ "rho": a.rho, "c1": a.c1, "c2": a.c2, "T": a.horizon, "steps": a.steps, "sampling": sampling });
    let disc = json!({ "horizon": a.horizon, "n_steps": a.steps });
    let mut m = envelope("simulate-paths", argv, &config, &sampling, disc)?;
    let mut grids = Vec::with_capacity(2 * a.n as usize);
    for i in 0..a.n {
        let pair = simulate_pair_indexed(a.rho, a.c1, a.c2, a.horizon, a.steps, a.seed, i)?;
        grids.push(pair.w1);
        grids.push(pair.w2);
    }
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_paths(&mut w, &grids)?;
    w.flush()?;
    m.insert("out".into(), json!(a.out.display().to_string()));
    m.insert("count".into(), json!(grids.len()));
    m.insert("layout".into(), json!("pairs interleaved: W1*(path 0), W2*(path 0), W1*(path 1), ..."));
    Ok(Value::Object(m))
}

fn constant_spec(a: &ConstantArgs) -> Result<ConstantSpec> {
    let need = |name: &str, v: Option<f64>| v.ok_or_else(|| Error::Config(format!("--{name} is required for --kind {:?}", a.kind)));
    match a.kind {
        KindArg::P => ConstantSpec::p(need("w1", a.w1)?, need("w2", a.w2)?, a.s),
        KindArg::H => ConstantSpec::h(need("w1", a.w1)?, need("w2", a.w2)?, a.s),
        KindArg::R => ConstantSpec::r(need("rho", a.rho)?, need("a", a.a)?, a.s, a.s2.unwrap_or(a.s)),
    }
}

/// Options actually used for `spec`; the continuous supremum is only
/// available for `R` with independent coordinates.
fn effective_paths(spec: &ConstantSpec, paths: PathOptions) -> PathOptions {
    match *spec {
        ConstantSpec::R { rho, .. } if rho != 0.0 => PathOptions { bridge: false, ..paths },
        _ => paths,
    }
}

fn cmd_constant(a: &ConstantArgs, argv: &[String]) -> Result<Value> {
    let spec = constant_spec(a)?;
    let sampling = a.sampling.sampling();
    let paths = effective_paths(&spec, a.disc.paths());
    let windows = a.disc.windows();
    let disc = match spec {
        ConstantSpec::H { .. } => to_value(&windows)?,
        _ => to_value(&paths)?,
    };
    let config = json!({ "spec": spec, "discretization": disc, "sampling": sampling });
    let mut m = envelope("constant", argv, &config, &sampling, disc)?;
    let key = m["config_hash"].as_str().expect("hash is a string").to_string();
    let result: EstimatorResult = cached(&a.cache.cache(), &key, &mut m, || estimate(&spec, &paths, &windows, &sampling))?;
    m.insert("spec".into(), to_value(&spec)?);
    m.insert("estimate".into(), json!(result.estimate));
    m.insert("stderr".into(), json!(result.stderr));
    m.insert("result".into(), to_value(&result)?);
    Ok(Value::Object(m))
}

/// What a limit evaluation needs besides the table of constants.
#[derive(Serialize)]
struct LimitConfig<'a> {
    params: &'a ModelParams,
    regime: RegimeKind,
    budget: &'a SojournBudget,
    mode: LimitMode,
    opts: &'a EvalOptions,
}

/// Evaluate the limit, caching the table of constants it rests on under the
/// fingerprint of the constants and their estimation settings (so limits
/// sharing constants share cache entries).
fn cached_limit(
    params: &ModelParams,
    regime: &Regime,
    budget: &SojournBudget,
    mode: LimitMode,
    opts: &EvalOptions,
    cache: &Cache,
    m: &mut Map<String, Value>,
) -> Result<LimitResult> {
    match regime.kind {
        RegimeKind::DimReduction => {
            if mode == LimitMode::Printed {
                m.insert("cached".into(), json!(false));
                return limit_theorem21(budget.s1, mode, opts);
            }
            let key = config_hash(&json!({ "limit_dim_reduction": budget.s1, "opts": opts }))?;
            cached(cache, &key, m, || limit_theorem21(budget.s1, mode, opts))
        }
        RegimeKind::Case1Supercritical => {
            let specs = required_constants(params, regime, budget)?;
            let paths = PathOptions { bridge: false, ..opts.paths };
            let key = config_hash(&json!({ "ratio": specs[0], "paths": paths, "sampling": opts.sampling }))?;
            let r: RatioEstimate = cached(cache, &key, m, || estimate_budget_ratio(&specs[0], &paths, &opts.sampling))?;
            let mut table = ConstantTable::default();
            table.ratios.push(RatioEntry { numerator: specs[0], denominator: specs[1], result: r.ratio });
            table.insert(specs[0], r.numerator);
            table.insert(specs[1], r.denominator);
            limit_theorem22(params, regime, budget, &table)
        }
        _ => {
            let specs = required_constants(params, regime, budget)?;
            let key = config_hash(&json!({ "table": specs, "opts": opts }))?;
            let table: ConstantTable = cached(cache, &key, m, || {
                let mut t = ConstantTable::default();
                fill_table(&mut t, &specs, opts)?;
                Ok(t)
            })?;
            limit_theorem22(params, regime, budget, &table)
        }
    }
}

fn cmd_limit(a: &LimitArgs, argv: &[String]) -> Result<Value> {
    let params = a.model.params()?;
    let mode: LimitMode = a.mode.parse()?;
    let budget = SojournBudget::new(a.s1, a.s2)?;
    let regime = regime_for(&params, a.force_case, a.tol)?;
    let sampling = a.sampling.sampling();
    let opts = a.disc.eval(sampling);
    let config = to_value(&LimitConfig { params: &params, regime: regime.kind, budget: &budget, mode, opts: &opts })?;
    let mut m = envelope("limit", argv, &config, &sampling, json!({ "paths": opts.paths, "windows": opts.windows }))?;
    let lim = cached_limit(&params, &regime, &budget, mode, &opts, &a.cache.cache(), &mut m)?;
    m.insert("regime".into(), json!(lim.regime.name()));
    m.insert("limit".into(), json!(lim.value));
    m.insert("stderr".into(), json!(lim.stderr));
    m.insert("constants_used".into(), to_value(&lim.constants_used)?);
    m.insert("ratios_used".into(), to_value(&lim.ratios_used)?);
    m.insert("warnings".into(), json!(lim.warnings));
    Ok(Value::Object(m))
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(float17).unwrap_or_default()
}

/// CSV line in the column order of [`ruinlab::mc::ConvergeTable::CSV_HEADER`].
fn probability_csv_row(e: &ProbabilityEstimate, regime: &str) -> String {
    let interval = e.ratio.interval();
    format!(
        "{},{},{},{},{},{},{},{},,{}\n",
        float17(e.u),
        float17(e.pi_hat.estimate),
        float17(e.pi_hat.stderr),
        float17(e.s_hat.estimate),
        float17(e.s_hat.stderr),
        opt_cell(e.ratio.value()),
        opt_cell(interval.map(|i| i.0)),
        opt_cell(interval.map(|i| i.1)),
        regime
    )
}

fn write_csv(path: &PathBuf, text: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_mc_ratio(a: &McRatioArgs, argv: &[String]) -> Result<Value> {
    let params = a.model.params()?;
    let budget = SojournBudget::new(a.s1, a.s2)?;
    let sampling = a.sampling.sampling();
    let regime = classify(&params, a.tol)?;
    let config = json!({
        "params": params, "u": a.u, "budget": budget, "n_steps": a.steps,
        "tilted": a.tilted, "paired": !a.single_resolution, "sampling": sampling,
    });
    let disc = json!({ "horizon": 1.0, "n_steps": a.steps });
    let mut m = envelope("mc-ratio", argv, &config, &sampling, disc)?;
    let run = |steps: usize| {
        if a.tilted {
            tilted_estimate(&params, a.u, &budget, steps, &sampling)
        } else {
            estimate_probabilities(&params, a.u, &budget, steps, &sampling)
        }
    };
    let est = run(a.steps)?;
    m.insert("regime".into(), json!(regime.kind.name()));
    m.insert("estimate".into(), to_value(&est)?);
    if !a.single_resolution {
        // Discrete monitoring misses excursions; the change at twice the
        // resolution is a proxy for the remaining bias.
        let fine = run(2 * a.steps)?;
        let shift = match (est.ratio.value(), fine.ratio.value()) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        };
        m.insert(
            "resolution_shift".into(),
            json!({
                "n_steps": 2 * a.steps,
                "pi_hat": fine.pi_hat.estimate - est.pi_hat.estimate,
                "s_hat": fine.s_hat.estimate - est.s_hat.estimate,
                "ratio": shift,
            }),
        );
        m.insert("estimate_fine".into(), to_value(&fine)?);
    }
    if let Some(path) = &a.out {
        let mut text = format!("{}\n", ruinlab::mc::ConvergeTable::CSV_HEADER);
        text.push_str(&probability_csv_row(&est, regime.kind.name()));
        write_csv(path, &text)?;
        m.insert("out".into(), json!(path.display().to_string()));
    }
    Ok(Value::Object(m))
}

fn cmd_converge(a: &ConvergeArgs, argv: &[String]) -> Result<Value> {
    let params = a.model.params()?;
    let mode: LimitMode = a.mode.parse()?;
    let budget = SojournBudget::new(a.s1, a.s2)?;
    let regime = regime_for(&params, a.force_case, a.tol)?;
    let sampling = a.sampling.sampling();
    let limit_sampling = Sampling::new(a.limit_n.unwrap_or(a.sampling.n), a.sampling.seed).with_workers(a.sampling.workers);
    let opts = a.disc.eval(limit_sampling);
    let config = json!({
        "params": params, "regime": regime.kind, "budget": budget, "u_list": a.u_list, "n_steps": a.steps,
        "sampling": sampling, "limit": if a.no_limit { Value::Null } else { json!({ "mode": mode, "opts": opts }) },
    });
    let disc = json!({ "horizon": 1.0, "n_steps": a.steps, "limit_paths": opts.paths, "limit_windows": opts.windows });
    let mut m = envelope("converge", argv, &config, &sampling, disc)?;
    let limit = if a.no_limit {
        None
    } else {
        Some(cached_limit(&params, &regime, &budget, mode, &opts, &a.cache.cache(), &mut m)?)
    };
    let table = converge_table(&params, regime.kind, &budget, &a.u_list, a.steps, &sampling, limit)?;
    if let Some(path) = &a.out {
        write_csv(path, &table.to_csv())?;
        m.insert("out".into(), json!(path.display().to_string()));
    }
    m.insert("gap_trend_monotone".into(), json!(table.gap_trend_monotone()));
    m.insert("table".into(), to_value(&table)?);
    Ok(Value::Object(m))
}

fn cmd_cache(a: &CacheArgs) -> Result<Value> {
    let cache = Cache::resolve(a.cache_dir.as_deref(), true);
    let dir = cache.dir().map(|d| d.display().to_string());
    Ok(match &a.action {
        CacheAction::List => json!({ "dir": dir, "keys": cache.list()? }),
        CacheAction::Clear => json!({ "dir": dir, "removed": cache.clear()? }),
        CacheAction::Path => json!({ "dir": dir }),
        CacheAction::Show { key } => cache.show(key)?,
    })
}
