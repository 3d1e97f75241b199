//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage, I/O, validation or analysis failure,
//! 2 infeasible balance (an effect modifier lies entirely on one side of its target).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::bootstrap::{bootstrap_effect, BootstrapError, BootstrapSettings};
use crate::data::{center_on_targets, effect_modifier_targets, load_ald, load_ipd, AggregateSummary, IndexPatientData};
use crate::estimation::{anchored_comparison, EffectEstimate, EffectScale};
use crate::method::{run_method, FitError, Method, MethodFit, MethodSettings};
use crate::propensity::ipt_weights;
use crate::sim::grid::{metrics_from_estimates, read_estimates_csv, write_estimates_csv, write_metrics_csv, GridResult};
use crate::sim::{run_grid, GridConfig};
use crate::weights::{check_feasibility, WeightError, WeightVector};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "maic",
    version,
    about = "Anchored matching-adjusted indirect comparison and its simulation harness",
    after_help = "Exit codes: 0 success; 1 usage, I/O, validation or analysis failure; 2 infeasible balance."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the anchored A vs B effect from index IPD and competitor aggregates.
    Analyze(AnalyzeArgs),
    /// Run the simulation grid and write metrics.csv, estimates.csv and manifest.json.
    Simulate(SimulateArgs),
    /// Recompute metrics.csv from an estimates.csv.
    Metrics(MetricsArgs),
    /// Check input files (or a simulation config) without analysing them.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Index-trial IPD CSV with columns treatment,outcome,<covariates...>.
    #[arg(long)]
    pub ipd: PathBuf,
    /// Competitor aggregate JSON (covariate_means, effect_estimate, effect_variance).
    #[arg(long)]
    pub ald: PathBuf,
    /// TOML or JSON file with defaults for any of the options below (keys use underscores).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated effect-modifier columns [default: every covariate].
    #[arg(long, value_delimiter = ',')]
    pub effect_modifiers: Option<Vec<String>>,
    /// MAIC, 2SMAIC, T-MAIC or T-2SMAIC [default: MAIC].
    #[arg(long)]
    pub method: Option<Method>,
    /// Bootstrap resamples; 0 reports the plug-in estimate without a variance [default: 2000].
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Bootstrap seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest tolerated fraction of failed resamples [default: 0.05].
    #[arg(long)]
    pub max_failure_rate: Option<f64>,
    /// Confidence level of the Wald interval [default: 0.95].
    #[arg(long)]
    pub level: Option<f64>,
    /// Relative balance tolerance of the weight fit [default: 1e-8].
    #[arg(long)]
    pub balance_tol: Option<f64>,
    /// Gradient tolerance of the weight fit [default: 1e-10].
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Iteration cap of the weight fit [default: 500].
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Truncation percentile for T-MAIC and T-2SMAIC [default: 95].
    #[arg(long)]
    pub truncation_percentile: Option<f64>,
    /// Worker threads [default: all cores]; never changes results.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the result JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-subject weights here; a `.summary.csv` sibling gets min/max/ESS per stage.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML or JSON config; keys are scenario fields, optional `scenarios` array of overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replicates per scenario (n_replicates).
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Bootstrap resamples per replicate (bootstrap_B).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Base seed (base_seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truncation percentile (truncation_percentile).
    #[arg(long)]
    pub truncation_percentile: Option<f64>,
    /// Largest tolerated fraction of failed resamples (max_failure_rate).
    #[arg(long)]
    pub max_failure_rate: Option<f64>,
    /// Treatment allocation: fixed or bernoulli (allocation).
    #[arg(long)]
    pub allocation: Option<String>,
    /// Any other scenario field, as KEY=VALUE with VALUE in JSON (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads [default: all cores]; never changes results.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Report progress on standard error.
    #[arg(long)]
    pub progress: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// estimates.csv written by `simulate`.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Output metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Replicates per scenario, for the discard counts [default: largest replicate index + 1].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// True A vs B effect.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub true_delta: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, requires = "ald")]
    pub ipd: Option<PathBuf>,
    #[arg(long, requires = "ipd")]
    pub ald: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub effect_modifiers: Option<Vec<String>>,
    /// Simulation config to check.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        Self {
            code: EXIT_FAILURE,
            error: e.into(),
        }
    }
}

fn infeasible(msg: String) -> CliError {
    CliError {
        code: EXIT_INFEASIBLE,
        error: anyhow!("infeasible balance: {msg}"),
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `stdout` and messages to `stderr`. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_FAILURE;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {:#}", e.error);
            e.code
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Analyze(a) => {
            let threads = a.threads;
            let text = with_threads(threads, || {
                let mut buf = Vec::new();
                analyze(a, &mut buf).map(|_| buf)
            })?;
            stdout.write_all(&text)?;
            Ok(())
        }
        Command::Simulate(s) => {
            let threads = s.threads;
            let text = with_threads(threads, || {
                let mut buf = Vec::new();
                simulate(s, &mut buf).map(|_| buf)
            })?;
            stdout.write_all(&text)?;
            Ok(())
        }
        Command::Metrics(m) => metrics(m, stdout),
        Command::Validate(v) => validate(v, stdout),
    }
}

fn with_threads<T, F>(threads: Option<usize>, f: F) -> Result<T, CliError>
where
    T: Send,
    F: FnOnce() -> Result<T, CliError> + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(anyhow!("--threads must be at least 1").into());
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("cannot start worker threads")?;
    pool.install(f)
}

fn read_document(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let doc = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        let table: toml::Table = toml::from_str(&text)?;
        serde_json::to_value(table)?
    };
    Ok(doc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalyzeOptions {
    effect_modifiers: Vec<String>,
    method: String,
    bootstrap: usize,
    seed: u64,
    max_failure_rate: f64,
    level: f64,
    balance_tol: f64,
    grad_tol: f64,
    max_iter: usize,
    truncation_percentile: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        let m = MethodSettings::default();
        let b = BootstrapSettings::default();
        Self {
            effect_modifiers: Vec::new(),
            method: Method::Maic.name().into(),
            bootstrap: b.resamples,
            seed: b.seed,
            max_failure_rate: b.max_failure_rate,
            level: 0.95,
            balance_tol: m.optimizer.balance_tol,
            grad_tol: m.optimizer.grad_tol,
            max_iter: m.optimizer.max_iter,
            truncation_percentile: m.truncation_percentile,
        }
    }
}

impl AnalyzeOptions {
    fn resolve(a: &AnalyzeArgs) -> Result<Self> {
        let mut o: Self = match &a.config {
            Some(path) => serde_json::from_value(read_document(path)?)
                .with_context(|| format!("invalid analysis config {}", path.display()))?,
            None => Self::default(),
        };
        if let Some(v) = &a.effect_modifiers {
            o.effect_modifiers = v.clone();
        }
        if let Some(m) = a.method {
            o.method = m.name().into();
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = a.$f { o.$f = v; } )* };
        }
        take!(bootstrap, seed, max_failure_rate, level, balance_tol, grad_tol, max_iter, truncation_percentile);

        if !(o.level > 0.0 && o.level < 1.0) {
            bail!("level must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&o.max_failure_rate) {
            bail!("max_failure_rate must lie in [0, 1]");
        }
        if !(o.truncation_percentile > 0.0 && o.truncation_percentile <= 100.0) {
            bail!("truncation_percentile must lie in (0, 100]");
        }
        if !(o.balance_tol > 0.0 && o.grad_tol > 0.0) {
            bail!("tolerances must be positive");
        }
        if o.bootstrap == 1 {
            bail!("bootstrap needs 0 (off) or at least 2 resamples");
        }
        Ok(o)
    }

    fn method(&self) -> Result<Method> {
        self.method.parse().map_err(|e: String| anyhow!(e))
    }

    fn settings(&self) -> MethodSettings {
        let mut s = MethodSettings::default();
        s.optimizer.balance_tol = self.balance_tol;
        s.optimizer.grad_tol = self.grad_tol;
        s.optimizer.max_iter = self.max_iter;
        s.truncation_percentile = self.truncation_percentile;
        s
    }
}

fn load_inputs(ipd: &Path, ald: &Path, modifiers: &[String]) -> Result<(IndexPatientData, AggregateSummary)> {
    let ipd = load_ipd(ipd, modifiers).with_context(|| format!("cannot load IPD {}", ipd.display()))?;
    let ald = load_ald(ald).with_context(|| format!("cannot load aggregate data {}", ald.display()))?;
    Ok((ipd, ald))
}

/// Feasibility of the weighting problem, as an exit-2 error when infeasible.
fn check_inputs(ipd: &IndexPatientData, ald: &AggregateSummary) -> Result<Vec<f64>, CliError> {
    let targets = effect_modifier_targets(ipd, ald)?;
    let report = check_feasibility(center_on_targets(ipd, &targets).view());
    if !report.is_feasible() {
        return Err(infeasible(report.describe(&ipd.effect_modifier_names())));
    }
    Ok(targets)
}

fn weight_summary(w: &WeightVector) -> Value {
    json!({ "min": w.min(), "max": w.max(), "ess": w.ess() })
}

fn analyze(a: AnalyzeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let opts = AnalyzeOptions::resolve(&a)?;
    let method = opts.method()?;
    let settings = opts.settings();
    let (ipd, ald) = load_inputs(&a.ipd, &a.ald, &opts.effect_modifiers)?;
    let targets = check_inputs(&ipd, &ald)?;

    let fit = run_method(&ipd, &targets, method, &settings).map_err(|e| match e {
        FitError::Weights(WeightError::InfeasibleBalance(msg)) => infeasible(msg),
        other => CliError::from(anyhow!(other)),
    })?;

    let (delta_10, var_10, boot) = if opts.bootstrap == 0 {
        (fit.delta_10, None, Value::Null)
    } else {
        let boot = BootstrapSettings {
            resamples: opts.bootstrap,
            seed: opts.seed,
            max_failure_rate: opts.max_failure_rate,
        };
        let res = bootstrap_effect(&ipd, &ald, method, &boot, &settings).map_err(|e| match e {
            BootstrapError::TooManyFailures { .. } => anyhow!(e).context("bootstrap failed"),
            other => anyhow!(other),
        })?;
        let info = json!({
            "requested": res.requested,
            "used": res.replicates.len(),
            "failed": res.n_failed,
            "failures": res.failures,
            "seed": opts.seed,
            "se_10": res.se,
        });
        (res.point, Some(res.se * res.se), info)
    };

    let (var_12, ci) = match var_10 {
        Some(v) => {
            let d10 = EffectEstimate::wald(delta_10, v, EffectScale::MeanDifference, opts.level);
            let d12 = anchored_comparison(&d10, ald.effect_estimate(), ald.effect_variance(), opts.level);
            (json!(d12.variance), json!([d12.ci_lower, d12.ci_upper]))
        }
        None => (Value::Null, Value::Null),
    };
    let delta_12 = delta_10 - ald.effect_estimate();

    let mut weights = Map::new();
    weights.insert("trial".into(), weight_summary(&fit.trial.weights));
    if let Some(c) = &fit.combined {
        weights.insert("combined".into(), weight_summary(c));
    }
    weights.insert("final".into(), weight_summary(&fit.weights));

    let out = json!({
        "method": method.name(),
        "delta_10": delta_10,
        "var_10": var_10,
        "delta_12": delta_12,
        "var_12": var_12,
        "ci": ci,
        "level": opts.level,
        "ess_trial": fit.trial.ess,
        "ess_combined": fit.combined.as_ref().map(WeightVector::ess),
        "ess_final": fit.weights.ess(),
        "plug_in_delta_10": fit.delta_10,
        "delta_20": ald.effect_estimate(),
        "var_20": ald.effect_variance(),
        "n": ipd.n(),
        "n_treated": ipd.n_treated(),
        "effect_modifiers": ipd.effect_modifier_names(),
        "alpha1": fit.trial.alpha1,
        "trial_iterations": fit.trial.iterations,
        "propensity": fit.propensity.as_ref().map(|p| json!({
            "beta0": p.beta0,
            "beta1": p.beta1,
            "iterations": p.iterations,
        })),
        "weights": weights,
        "bootstrap": boot,
    });
    let text = serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)? + "\n";
    match &a.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => stdout.write_all(text.as_bytes())?,
    }
    if let Some(path) = &a.diagnostics {
        write_diagnostics(path, &ipd, &fit)?;
    }
    Ok(())
}

fn write_diagnostics(path: &Path, ipd: &IndexPatientData, fit: &MethodFit) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let ipt = fit.propensity.as_ref().map(|p| ipt_weights(p, ipd.treatment()));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "subject",
        "treatment",
        "trial_weight",
        "propensity",
        "ipt_weight",
        "combined_weight",
        "final_weight",
    ])?;
    for i in 0..ipd.n() {
        w.write_record([
            (i + 1).to_string(),
            u8::from(ipd.treatment()[i]).to_string(),
            fit.trial.weights.values()[i].to_string(),
            opt(fit.propensity.as_ref().map(|p| p.propensity_scores[i])),
            opt(ipt.as_ref().map(|v| v[i])),
            opt(fit.combined.as_ref().map(|c| c.values()[i])),
            fit.weights.values()[i].to_string(),
        ])?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| anyhow!(e.to_string()))?)?;

    let mut s = csv::Writer::from_writer(Vec::new());
    s.write_record(["stage", "min", "max", "ess"])?;
    let mut stages = vec![("trial", &fit.trial.weights)];
    if let Some(c) = &fit.combined {
        stages.push(("combined", c));
    }
    stages.push(("final", &fit.weights));
    for (name, wv) in stages {
        s.write_record([name.to_string(), wv.min().to_string(), wv.max().to_string(), wv.ess().to_string()])?;
    }
    if let Some(p) = &fit.propensity {
        let lo = p.propensity_scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.propensity_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.write_record(["propensity".to_string(), lo.to_string(), hi.to_string(), String::new()])?;
    }
    write_atomic(&summary_path(path), &s.into_inner().map_err(|e| anyhow!(e.to_string()))?)?;
    Ok(())
}

/// `diag.csv` -> `diag.summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.summary.csv"))
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("cannot write {}", path.display()))
}

/// Writes every file to a temporary name first and renames them only once all
/// writes succeeded; on failure the temporaries are removed.
fn write_all_atomic(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut written = Vec::new();
    let mut result = Ok(());
    for (path, bytes) in files {
        let tmp = temp_path(path);
        if let Err(e) = fs::write(&tmp, bytes) {
            result = Err(anyhow!(e).context(format!("cannot write {}", path.display())));
            break;
        }
        written.push((tmp, path));
    }
    if result.is_ok() {
        for (tmp, path) in &written {
            if let Err(e) = fs::rename(tmp, path) {
                result = Err(anyhow!(e).context(format!("cannot write {}", path.display())));
                break;
            }
        }
    }
    if result.is_err() {
        for (tmp, _) in &written {
            let _ = fs::remove_file(tmp);
        }
    }
    result
}

/// Config overrides from the command line, keyed by scenario field name.
fn simulate_overrides(s: &SimulateArgs) -> Result<Map<String, Value>> {
    let mut o = Map::new();
    if let Some(v) = s.replicates {
        o.insert("n_replicates".into(), json!(v));
    }
    if let Some(v) = s.bootstrap {
        o.insert("bootstrap_B".into(), json!(v));
    }
    if let Some(v) = s.seed {
        o.insert("base_seed".into(), json!(v));
    }
    if let Some(v) = s.truncation_percentile {
        o.insert("truncation_percentile".into(), json!(v));
    }
    if let Some(v) = s.max_failure_rate {
        o.insert("max_failure_rate".into(), json!(v));
    }
    if let Some(v) = &s.allocation {
        o.insert("allocation".into(), json!(v.to_lowercase()));
    }
    for item in &s.set {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{item}`"))?;
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        o.insert(key.trim().to_string(), value);
    }
    Ok(o)
}

fn load_grid(config: Option<&Path>, overrides: &Map<String, Value>) -> Result<GridConfig> {
    let grid = match config {
        Some(path) => GridConfig::load(path, overrides).with_context(|| format!("invalid config {}", path.display()))?,
        None => GridConfig::from_value(json!({}), overrides)?,
    };
    Ok(grid)
}

/// Canonical JSON of the resolved grid; its SHA-256 identifies the run.
pub fn config_fingerprint(grid: &GridConfig) -> Result<(String, String)> {
    let text = serde_json::to_string(grid)?;
    let hash = Sha256::digest(text.as_bytes());
    let hex = hash.iter().map(|b| format!("{b:02x}")).collect();
    Ok((text, hex))
}

fn simulate(s: SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let overrides = simulate_overrides(&s)?;
    let grid = load_grid(s.config.as_deref(), &overrides)?;
    fs::create_dir_all(&s.out).with_context(|| format!("cannot create {}", s.out.display()))?;

    let report = |done: usize, total: usize| {
        if done == total || done.is_multiple_of((total / 100).max(1)) {
            eprint!("\r{done}/{total} replicates");
            if done == total {
                eprintln!();
            }
        }
    };
    let result: GridResult = if s.progress {
        run_grid(&grid, Some(&report))?
    } else {
        run_grid(&grid, None)?
    };

    let mut metrics = Vec::new();
    write_metrics_csv(&mut metrics, &result.metrics)?;
    let mut estimates = Vec::new();
    write_estimates_csv(&mut estimates, &result.estimates)?;
    let mut discards = csv::Writer::from_writer(Vec::new());
    discards.write_record(["scenario", "method", "replicate", "reason"])?;
    for d in &result.discards {
        let reason = match &d.reason {
            crate::sim::Discard::Fit(f) => f.to_string(),
            crate::sim::Discard::Bootstrap { failed, requested } => {
                format!("{failed} of {requested} bootstrap resamples failed")
            }
        };
        discards.write_record([d.scenario.clone(), d.method.name().to_string(), d.replicate.to_string(), reason])?;
    }
    let discards = discards.into_inner().map_err(|e| anyhow!(e.to_string()))?;

    let (config_text, hash) = config_fingerprint(&grid)?;
    let config_value: Value = serde_json::from_str(&config_text).map_err(anyhow::Error::from)?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seeds": grid.scenarios.iter().map(|c| c.base_seed).collect::<Vec<_>>(),
        "config_sha256": hash,
        "config": config_value,
        "files": ["metrics.csv", "estimates.csv", "discards.csv"],
    });
    let manifest = serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)? + "\n";

    write_all_atomic(&[
        (s.out.join("metrics.csv"), metrics),
        (s.out.join("estimates.csv"), estimates),
        (s.out.join("discards.csv"), discards),
        (s.out.join("manifest.json"), manifest.into_bytes()),
    ])?;
    writeln!(
        stdout,
        "{} metric rows, {} estimates, {} discarded analyses written to {}",
        result.metrics.len(),
        result.estimates.len(),
        result.discards.len(),
        s.out.display()
    )?;
    Ok(())
}

fn metrics(m: MetricsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = fs::File::open(&m.estimates).with_context(|| format!("cannot open {}", m.estimates.display()))?;
    let rows = read_estimates_csv(file)?;
    let table = metrics_from_estimates(&rows, m.true_delta, m.replicates);
    let mut bytes = Vec::new();
    write_metrics_csv(&mut bytes, &table)?;
    write_atomic(&m.out, &bytes)?;
    writeln!(stdout, "{} metric rows written to {}", table.len(), m.out.display())?;
    Ok(())
}

fn validate(v: ValidateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if v.ipd.is_none() && v.config.is_none() {
        return Err(anyhow!("nothing to validate: pass --ipd and --ald, or --config").into());
    }
    if let Some(path) = &v.config {
        let grid = load_grid(Some(path), &Map::new())?;
        writeln!(stdout, "config ok: {} scenarios", grid.scenarios.len())?;
    }
    if let (Some(ipd_path), Some(ald_path)) = (&v.ipd, &v.ald) {
        let modifiers = v.effect_modifiers.clone().unwrap_or_default();
        let (ipd, ald) = load_inputs(ipd_path, ald_path, &modifiers)?;
        check_inputs(&ipd, &ald)?;
        writeln!(
            stdout,
            "inputs ok: {} subjects ({} treated), effect modifiers {}",
            ipd.n(),
            ipd.n_treated(),
            ipd.effect_modifier_names().join(",")
        )?;
    }
    Ok(())
}
