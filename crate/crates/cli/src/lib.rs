//! Command-line front end: `test`, `simulate`, `mc` and `tune`.

pub mod config;
pub mod error;
pub mod ingest;

use clap::{Args, Parser, Subcommand};
use config::{parse_model_kind, parse_tests, pick, ConfigFile, Overrides, Setting};
use error::{CliError, CliResult};
use lrd_core::bootstrap::{TrendKernel, DEFAULT_REPLICATES};
use lrd_core::lrcov::CovarianceCorrection;
use lrd_core::mc::{to_tsv, Experiment, MonteCarloReport};
use lrd_core::sim::{d2_profile, FractionalType, MemoryProfile};
use lrd_core::tuning::{gcv_select_b, mv_select, BandwidthSet, GcvOptions, MvGrid, DEFAULT_MV_REPLICATES};
use lrd_core::{run_test, Model, ModelKind, RegressionSample, SimulationSpec, TestConfig, TestKind, TestReport};
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const TEST_SCHEMA: &str = "lrd.test/1";
pub const TUNE_SCHEMA: &str = "lrd.tune/1";
pub const MC_SCHEMA: &str = "lrd.mc/1";
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "lrd", version, about = "Bootstrap tests for long memory in time-varying coefficient regression")]
pub struct Cli {
    /// Worker threads; defaults to LRD_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the bootstrap tests on a CSV file.
    Test(TestArgs),
    /// Simulate one sample from a built-in model and write it as CSV.
    Simulate(SimulateArgs),
    /// Monte Carlo size or power study.
    Mc(McArgs),
    /// Select smoothing parameters for a CSV file.
    Tune(TuneArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct Smoothing {
    /// Regression bandwidth, or `auto` for GCV.
    #[arg(long)]
    pub b: Option<Setting<f64>>,
    /// Difference window, or `auto` for minimum volatility.
    #[arg(long)]
    pub m: Option<Setting<usize>>,
    /// Long-run covariance bandwidth, or `auto` for minimum volatility.
    #[arg(long)]
    pub tau: Option<Setting<f64>>,
    /// Bandwidth of M(t), or `auto` for eta = b.
    #[arg(long)]
    pub eta: Option<Setting<f64>>,
}

impl Smoothing {
    fn resolve(&self, file: &ConfigFile) -> Overrides {
        Overrides {
            b: pick(self.b, file.b, Setting::Auto),
            m: pick(self.m, file.m, Setting::Auto),
            tau: pick(self.tau, file.tau, Setting::Auto),
            eta: pick(self.eta, file.eta, Setting::Auto),
        }
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV with a header; first column is the response, the rest covariates.
    #[arg(short, long)]
    pub input: PathBuf,
    /// `covariate` (default) or `trend`.
    #[arg(long)]
    pub model: Option<String>,
    /// Comma-separated subset of kpss, rs, vs, ks (default all).
    #[arg(long)]
    pub tests: Option<String>,
    /// Bootstrap replicates.
    #[arg(short = 'B', long)]
    pub replicates: Option<usize>,
    /// Bootstrap replicates per minimum-volatility cell.
    #[arg(long)]
    pub mv_replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub smoothing: Smoothing,
    /// Level for the printed verdicts.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Kernel of the trend-model bootstrap: `plain` or `jackknife`.
    #[arg(long)]
    pub trend_kernel: Option<String>,
    /// Long-run covariance estimator: `residual` (default) or `subtracted`.
    #[arg(long)]
    pub covariance: Option<String>,
    /// `json` (default) or `tsv`.
    #[arg(long)]
    pub format: Option<String>,
    /// Write the report here instead of standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// M0, M1 or M2.
    #[arg(long, default_value = "M1")]
    pub model: String,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Constant memory parameter.
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    /// Use the time-varying memory profile 0.35 + 0.1 cos(2 pi t) instead of `d`.
    #[arg(long)]
    pub varying_memory: bool,
    /// Start the fractional filter at the first observation.
    #[arg(long)]
    pub type_ii: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// M0, M1 or M2.
    #[arg(long, default_value = "M1")]
    pub model: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// Replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Bootstrap replicates per replication.
    #[arg(short = 'B', long)]
    pub replicates: Option<usize>,
    /// Bootstrap replicates per minimum-volatility cell.
    #[arg(long)]
    pub mv_replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Constant memory parameter for a single point or an `--n-grid` sweep.
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    /// Comma-separated memory parameters to sweep at fixed n.
    #[arg(long, conflicts_with = "n_grid")]
    pub d_grid: Option<String>,
    /// Comma-separated sample sizes to sweep at fixed memory.
    #[arg(long)]
    pub n_grid: Option<String>,
    /// Use the time-varying memory profile 0.35 + 0.1 cos(2 pi t).
    #[arg(long, conflicts_with = "d_grid")]
    pub varying_memory: bool,
    #[command(flatten)]
    pub smoothing: Smoothing,
    /// Long-run covariance estimator: `residual` (default) or `subtracted`.
    #[arg(long)]
    pub covariance: Option<String>,
    /// Full-size settings (n = 1000, R = 1000, B = 2000) unless overridden.
    #[arg(long)]
    pub full_scale: bool,
    /// `tsv` (default) or `json`.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// `covariate` (default) or `trend`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub mv_replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub smoothing: Smoothing,
    #[arg(long)]
    pub trend_kernel: Option<String>,
    /// Long-run covariance estimator: `residual` (default) or `subtracted`.
    #[arg(long)]
    pub covariance: Option<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Tsv,
}

fn parse_format(s: &str) -> CliResult<Format> {
    match s.to_ascii_lowercase().as_str() {
        "json" => Ok(Format::Json),
        "tsv" => Ok(Format::Tsv),
        other => Err(CliError::Config(format!("unknown format `{other}` (expected json or tsv)"))),
    }
}

fn parse_covariance(flag: &Option<String>, file: &ConfigFile) -> CliResult<CovarianceCorrection> {
    pick(flag.clone(), file.covariance.clone(), "residual".into())
        .parse()
        .map_err(CliError::Config)
}

fn parse_trend_kernel(s: &str) -> CliResult<TrendKernel> {
    match s.to_ascii_lowercase().as_str() {
        "plain" => Ok(TrendKernel::Plain),
        "jackknife" => Ok(TrendKernel::Jackknife),
        other => Err(CliError::Config(format!("unknown trend kernel `{other}` (expected plain or jackknife)"))),
    }
}

pub fn parse_sim_model(s: &str) -> CliResult<Model> {
    match s.to_ascii_uppercase().as_str() {
        "M0" => Ok(Model::M0),
        "M1" => Ok(Model::M1),
        "M2" => Ok(Model::M2),
        other => Err(CliError::Config(format!("unknown model `{other}` (expected M0, M1 or M2)"))),
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> CliResult<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| CliError::Config(format!("{what}: cannot parse `{v}`"))))
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("{what}: empty list")));
    }
    Ok(items)
}

/// Seed from the flag or config file, else from the clock.
fn resolve_seed(flag: Option<u64>, file: &ConfigFile) -> u64 {
    flag.or(file.seed).unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        nanos ^ ((std::process::id() as u64) << 32)
    })
}

fn emit(text: &str, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::io("stdout", e))
        }
    }
}

fn set_threads(flag: Option<usize>, file: &ConfigFile) -> CliResult<()> {
    let env = std::env::var("LRD_THREADS").ok().and_then(|v| v.parse().ok());
    if let Some(n) = flag.or(file.threads).or(env) {
        if n == 0 {
            return Err(CliError::Config("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parse arguments already split off the program name and run the command.
pub fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    set_threads(cli.threads, &file)?;
    match &cli.command {
        Command::Test(args) => cmd_test(args, &file),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Mc(args) => cmd_mc(args, &file),
        Command::Tune(args) => cmd_tune(args, &file),
    }
}

fn test_config(
    overrides: &Overrides,
    replicates: usize,
    mv_replicates: usize,
    seed: u64,
    trend_kernel: TrendKernel,
    covariance: CovarianceCorrection,
) -> TestConfig {
    TestConfig {
        b: overrides.b.value(),
        m: overrides.m.value(),
        tau: overrides.tau.value(),
        eta: overrides.eta.value(),
        replicates,
        mv_replicates,
        seed,
        trend_kernel,
        covariance,
        gcv: GcvOptions::default(),
    }
}

pub fn cmd_test(args: &TestArgs, file: &ConfigFile) -> CliResult<()> {
    let kind = parse_model_kind(&pick(args.model.clone(), file.model.clone(), "covariate".into()))?;
    let tests = match (&args.tests, &file.tests) {
        (Some(t), _) => parse_tests(std::slice::from_ref(t))?,
        (None, Some(t)) => parse_tests(t)?,
        (None, None) => TestKind::ALL.to_vec(),
    };
    let replicates = pick(args.replicates, file.replicates, DEFAULT_REPLICATES);
    if replicates < 100 {
        return Err(CliError::Config(format!("need at least 100 bootstrap replicates, got {replicates}")));
    }
    let mv_replicates = pick(args.mv_replicates, file.mv_replicates, DEFAULT_MV_REPLICATES);
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let format = parse_format(&pick(args.format.clone(), file.format.clone(), "json".into()))?;
    let trend_kernel = parse_trend_kernel(&pick(args.trend_kernel.clone(), file.trend_kernel.clone(), "plain".into()))?;
    let overrides = args.smoothing.resolve(file);
    let seed = resolve_seed(args.seed, file);

    let sample = ingest::read_csv(&args.input)?;
    overrides.validate(sample.n())?;
    eprintln!("seed: {seed}");
    let covariance = parse_covariance(&args.covariance, file)?;
    let config = test_config(&overrides, replicates, mv_replicates, seed, trend_kernel, covariance);
    let reports = run_test(&sample, kind, &tests, &config)?;
    for r in &reports {
        eprintln!("{}", verdict(r, alpha));
    }
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&test_json(&sample, kind, covariance, &reports, alpha, seed)).unwrap() + "\n",
        Format::Tsv => test_tsv(&reports),
    };
    emit(&text, args.output.as_deref())
}

fn verdict(r: &TestReport, alpha: f64) -> String {
    let decision = if r.rejects(alpha) {
        "reject short memory"
    } else {
        "no evidence of long memory"
    };
    format!(
        "{}: statistic {:.6}, p = {:.4} -> {decision} at level {alpha}",
        r.test, r.statistic, r.p_value
    )
}

fn selected_json(p: &BandwidthSet) -> Value {
    json!({ "b": p.b, "m": p.m, "tau": p.tau, "eta": p.eta })
}

pub fn test_json(
    sample: &RegressionSample,
    kind: ModelKind,
    covariance: CovarianceCorrection,
    reports: &[TestReport],
    alpha: f64,
    seed: u64,
) -> Value {
    json!({
        "schema": TEST_SCHEMA,
        "model": kind.name(),
        "n": sample.n(),
        "p": sample.p(),
        "seed": seed,
        "alpha": alpha,
        "covariance": covariance.name(),
        "tests": reports.iter().map(|r| json!({
            "test": r.test.name(),
            "statistic": r.statistic,
            "p_value": r.p_value,
            "B": r.replicates,
            "rejects": r.rejects(alpha),
            "selected": selected_json(&r.params),
        })).collect::<Vec<_>>(),
    })
}

fn test_tsv(reports: &[TestReport]) -> String {
    let mut out = String::from("test\tstatistic\tp_value\tB\tb\tm\ttau\teta\n");
    for r in reports {
        let p = &r.params;
        out += &format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.test, r.statistic, r.p_value, r.replicates, p.b, p.m, p.tau, p.eta
        );
    }
    out
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let model = parse_sim_model(&args.model)?;
    let seed = resolve_seed(args.seed, &ConfigFile::default());
    let mut spec = SimulationSpec::new(model, args.n, args.d, seed);
    if args.varying_memory {
        spec.memory = MemoryProfile::TimeVarying(d2_profile);
    }
    if args.type_ii {
        spec.fractional_type = FractionalType::TypeII;
    }
    spec.validate()?;
    eprintln!("seed: {seed}");
    let sample = lrd_core::simulate_model(&spec)?;
    let mut buf = Vec::new();
    ingest::write_csv(&sample, &mut buf)?;
    emit(&String::from_utf8(buf).expect("csv is utf-8"), args.output.as_deref())
}

pub fn cmd_mc(args: &McArgs, file: &ConfigFile) -> CliResult<()> {
    let model = parse_sim_model(&args.model)?;
    let (n0, r0, b0) = if args.full_scale { (1000, 1000, 2000) } else { (500, 300, 500) };
    let n = args.n.unwrap_or(n0);
    let reps = pick(args.reps, None, r0);
    let replicates = pick(args.replicates, file.replicates, b0);
    let mv_replicates = pick(args.mv_replicates, file.mv_replicates, DEFAULT_MV_REPLICATES);
    let format = parse_format(&pick(args.format.clone(), file.format.clone(), "tsv".into()))?;
    let overrides = args.smoothing.resolve(file);
    let covariance = parse_covariance(&args.covariance, file)?;
    let seed = resolve_seed(args.seed, file);

    let memory = |d: f64| {
        if args.varying_memory {
            MemoryProfile::TimeVarying(d2_profile)
        } else {
            MemoryProfile::Constant(d)
        }
    };
    let points: Vec<(usize, MemoryProfile, f64)> = match (&args.d_grid, &args.n_grid) {
        (Some(ds), _) => parse_list::<f64>("d-grid", ds)?.into_iter().map(|d| (n, memory(d), d)).collect(),
        (None, Some(ns)) => parse_list::<usize>("n-grid", ns)?
            .into_iter()
            .map(|size| (size, memory(args.d), size as f64))
            .collect(),
        (None, None) => vec![(n, memory(args.d), if args.varying_memory { f64::NAN } else { args.d })],
    };
    for &(size, _, _) in &points {
        overrides.validate(size)?;
    }
    eprintln!("seed: {seed}");
    let mut reports: Vec<MonteCarloReport> = Vec::with_capacity(points.len());
    for (size, mem, x) in points {
        let mut e = Experiment::new(model, size, 0.0, reps, replicates, seed);
        e.memory = mem;
        e.test = TestConfig {
            mv_replicates,
            ..test_config(&overrides, replicates, mv_replicates, seed, TrendKernel::Plain, covariance)
        };
        let rep = e.run(x)?;
        log::info!("{} n = {size} x = {x}: {:.1}s", rep.model, rep.wall_seconds);
        reports.push(rep);
    }
    let text = match format {
        Format::Tsv => to_tsv(&reports),
        Format::Json => serde_json::to_string_pretty(&mc_json(&reports)).unwrap() + "\n",
    };
    emit(&text, args.output.as_deref())
}

pub fn mc_json(reports: &[MonteCarloReport]) -> Value {
    json!({
        "schema": MC_SCHEMA,
        "reports": reports.iter().map(|r| json!({
            "model": r.model,
            "n": r.n,
            "x": r.x,
            "replications": r.replications,
            "B": r.replicates,
            "seed": r.seed,
            "failures": r.failures,
            "wall_seconds": r.wall_seconds,
            "rates": r.rows.iter().map(|row| json!({
                "test": row.test.name(),
                "level": row.level,
                "rejections": row.rejections,
                "rate": row.rate,
                "half_width": row.half_width,
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

pub fn cmd_tune(args: &TuneArgs, file: &ConfigFile) -> CliResult<()> {
    let kind = parse_model_kind(&pick(args.model.clone(), file.model.clone(), "covariate".into()))?;
    let mv_replicates = pick(args.mv_replicates, file.mv_replicates, DEFAULT_MV_REPLICATES);
    let trend_kernel = parse_trend_kernel(&pick(args.trend_kernel.clone(), file.trend_kernel.clone(), "plain".into()))?;
    let covariance = parse_covariance(&args.covariance, file)?;
    let overrides = args.smoothing.resolve(file);
    let seed = resolve_seed(args.seed, file);
    let sample = ingest::read_csv(&args.input)?;
    let n = sample.n();
    overrides.validate(n)?;
    eprintln!("seed: {seed}");
    let sample = match kind {
        ModelKind::Trend => sample.as_trend(),
        ModelKind::Covariate => sample,
    };
    let (b, gcv) = match overrides.b.value() {
        Some(b) => (b, Value::Null),
        None => {
            let sel = gcv_select_b(&sample, &GcvOptions::default())?;
            let info = json!({ "b": sel.b, "c_hat": sel.c_hat, "lower": sel.lower, "upper": sel.upper });
            (sel.b, info)
        }
    };
    let eta = overrides.eta.value().unwrap_or(b);
    let grid = MvGrid::for_sample(n, overrides.m.value(), overrides.tau.value());
    let choices: Vec<(TestKind, usize, f64)> = if grid.is_single() {
        TestKind::ALL.iter().map(|t| (*t, grid.m[0], grid.tau[0])).collect()
    } else {
        let sel = mv_select(&sample, kind, b, eta, &grid, mv_replicates, seed, trend_kernel, covariance)?;
        TestKind::ALL
            .iter()
            .map(|t| {
                let (m, tau) = sel.choice(*t);
                (*t, m, tau)
            })
            .collect()
    };
    let sets = choices
        .into_iter()
        .map(|(t, m, tau)| {
            let set = BandwidthSet::new(n, b, m, tau, eta, mv_replicates)?;
            Ok(json!({
                "test": t.name(),
                "b": set.b,
                "m": set.m,
                "tau": set.tau,
                "eta": set.eta,
                "mv_replicates": set.mv_replicates,
            }))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let out = json!({
        "schema": TUNE_SCHEMA,
        "model": kind.name(),
        "n": n,
        "p": sample.p(),
        "seed": seed,
        "gcv": gcv,
        "bandwidths": sets,
    });
    emit(&(serde_json::to_string_pretty(&out).unwrap() + "\n"), args.output.as_deref())
}
