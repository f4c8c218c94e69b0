//! `introlab` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage errors, 3 for runtime failures.

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use introlab::eval;
use introlab::nets::Checkpoint;
use introlab::rng;
use introlab::toydata;
use introlab::trainer::{self, Combo, ConfigLayer, GridOutcome, Manifest, TrainConfig};
use introlab::{Method, ToyKind};
use serde_json::json;
use thiserror::Error;

pub use config::{load_config, ConfigError, ConfigFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Keys a sweep file may hold besides training keys.
pub const GRID_KEYS: [&str; 3] = ["methods", "combos", "seeds"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "introlab", version, about = "Introspective VAE training on 2D toy data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its run directory.
    Train(TrainArgs),
    /// Recompute metrics from a run's EMA checkpoint.
    Eval(EvalArgs),
    /// Sweep JSD and adversarial-distance gradients over Gaussian separations.
    DiagnoseGradients(DiagnoseArgs),
    /// Train a method x combo x seed grid described by a config file.
    Sweep(SweepArgs),
    /// Scatter plot of a run's real and generated samples.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_with::<Method>)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_with::<ToyKind>)]
    pub dataset: Option<ToyKind>,
    #[arg(long, value_parser = parse_with::<Combo>)]
    pub combo: Option<Combo>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any other training key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Number of generated samples; defaults to the run's eval sample count.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub sigma: f64,
    #[arg(long = "max-sep")]
    pub max_sep: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent runs.
    #[arg(long, env = "INTROLAB_JOBS", default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_with<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::DiagnoseGradients(args) => cmd_diagnose(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Plot(args) => cmd_plot(&args),
    }
}

/// Defaults, then the config file, then flags. The returned config records
/// the file and flag layers.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    let mut layers = Vec::new();
    if let Some(path) = &args.config {
        let file = load_config(path, &[]).map_err(|e| match e {
            ConfigError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        })?;
        file.apply(&mut cfg, &[]).map_err(|e| CliError::Usage(e.to_string()))?;
        layers.push(file.layer(&[]));
    }

    let mut flags: Vec<(String, String, String)> = Vec::new();
    let mut flag = |name: &str, key: &str, value: Option<String>| {
        if let Some(v) = value {
            flags.push((name.to_string(), key.to_string(), v));
        }
    };
    flag("--method", "method", args.method.map(|m| m.to_string()));
    flag("--dataset", "dataset", args.dataset.map(|d| d.to_string()));
    flag("--combo", "combo", args.combo.map(|c| c.to_string()));
    flag("--seed", "seed", args.seed.map(|s| s.to_string()));
    flag("--iters", "iters", args.iters.map(|s| s.to_string()));
    flag("--out", "out", args.out.as_ref().map(|p| p.display().to_string()));
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{o}'")))?;
        flags.push(("--set".into(), k.trim().to_string(), v.trim().to_string()));
    }
    // A method flag changes which defaults a combo restores, so it goes first.
    flags.sort_by_key(|(_, key, _)| key != "method");

    let mut seen = BTreeMap::new();
    for (name, key, value) in &flags {
        if let Some(prev) = seen.insert(key.clone(), value.clone()) {
            if &prev != value {
                return Err(CliError::Usage(format!("{name}: '{key}' given twice ({prev} and {value})")));
            }
        }
        cfg.set(key, value).map_err(|msg| CliError::Usage(format!("{name}: {msg}")))?;
    }
    if !seen.is_empty() {
        layers.push(ConfigLayer {
            source: "flags".into(),
            values: seen,
        });
    }
    let out_given = args.out.is_some() || layers.iter().any(|l| l.values.contains_key("out"));
    if !out_given {
        return Err(CliError::Usage("--out is required (or set 'out' in the config file)".into()));
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.layers = layers;
    Ok(cfg)
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_train_config(args)?;
    let art = trainer::train(&cfg).map_err(runtime)?;
    match &art.final_metrics {
        Some(m) => println!(
            "{}: kl {:.4} jsd {:.4} modes {}",
            art.dir.display(),
            m.kl,
            m.jsd,
            m.modes.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
        ),
        None => println!("{}: no iterations run", art.dir.display()),
    }
    println!("manifest: {}", art.manifest.display());
    Ok(())
}

fn load_manifest(dir: &Path) -> Result<Manifest, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Runtime(format!("run directory {} not found", dir.display())));
    }
    Manifest::load(dir).map_err(runtime)
}

/// Decodes `count` prior draws with the run's EMA decoder.
fn generate_from_run(dir: &Path, manifest: &Manifest, count: usize) -> Result<(PathBuf, introlab::Matrix), CliError> {
    let path = manifest
        .file(dir, "checkpoint_ema")
        .ok_or_else(|| CliError::Runtime("manifest lists no EMA checkpoint".into()))?;
    let ckpt = Checkpoint::load(&path).map_err(runtime)?;
    let decoder = ckpt
        .get("decoder")
        .ok_or_else(|| CliError::Runtime(format!("{} has no decoder", path.display())))?;
    let mut noise = rng::stream(manifest.config.seed, 3);
    let z = rng::standard_normal(&mut noise, count, manifest.config.latent_dim);
    Ok((path, decoder.apply(&z).map_err(runtime)?))
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.run)?;
    let count = args.samples.unwrap_or(manifest.config.eval_samples);
    if count == 0 {
        return Err(CliError::Usage("--samples must be >= 1".into()));
    }
    let (checkpoint, generated) = generate_from_run(&args.run, &manifest, count)?;
    let kind = manifest.config.dataset;
    let real = trainer::reference_batch(kind, count);
    let m = eval::evaluate(&real, &generated, trainer::dataset_modes(kind).as_ref()).map_err(runtime)?;
    let report = json!({
        "kl": m.kl,
        "jsd": m.jsd,
        "modes": m.modes,
        "per_mode_fracs": m.per_mode_fracs,
        "checkpoint": checkpoint.display().to_string(),
        "samples": count,
    });
    let out = args.run.join("metrics.json");
    fs::write(&out, serde_json::to_string_pretty(&report).map_err(runtime)? + "\n").map_err(runtime)?;
    println!("{}", serde_json::to_string(&report).map_err(runtime)?);
    Ok(())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let seps = eval::sweep_grid(args.max_sep, args.steps).map_err(|e| CliError::Usage(e.to_string()))?;
    let records = eval::gradient_sweep(args.sigma, &seps).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    eval::write_sweep_csv(&mut buf, &records).map_err(runtime)?;
    fs::write(&args.out, buf).map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;

    let below = |f: fn(&eval::GradientSweepRecord) -> f64, t: f64| {
        records.iter().find(|r| r.delta > 0.0 && f(r).abs() < t).map(|r| r.delta)
    };
    let last = records.last().expect("at least two steps");
    let report = json!({
        "sigma": args.sigma,
        "max_sep": args.max_sep,
        "steps": args.steps,
        "csv": args.out.display().to_string(),
        "final": last,
        "all_converged": records.iter().all(|r| r.converged),
        "first_delta_jsd_grad_below_1e-8": below(|r| r.jsd_grad, 1e-8),
        "first_delta_as_grad_below_1e-8": below(|r| r.as_grad, 1e-8),
    });
    let report_path = PathBuf::from(format!("{}.json", args.out.display()));
    fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(runtime)? + "\n").map_err(runtime)?;
    println!(
        "{} rows -> {} (jsd at {}: {:.9}, d/d delta {:.3e}; as grad {:.3e})",
        records.len(),
        args.out.display(),
        last.delta,
        last.jsd,
        last.jsd_grad,
        last.as_grad
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(file: &ConfigFile, key: &str, default: Vec<T>) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    let Some(e) = file.get(key) else { return Ok(default) };
    let items: Result<Vec<T>, CliError> = e
        .value
        .split(',')
        .map(|v| {
            v.trim().parse().map_err(|err| {
                CliError::Usage(format!("{}:{}: {key}: '{}': {err}", file.path.display(), e.line, v.trim()))
            })
        })
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("{}:{}: {key} is empty", file.path.display(), e.line)));
    }
    Ok(items)
}

/// Base config and grid cells described by a sweep file.
pub fn resolve_sweep(path: &Path) -> Result<(TrainConfig, Vec<trainer::GridCell>, ConfigFile), CliError> {
    let file = load_config(path, &GRID_KEYS).map_err(|e| match e {
        ConfigError::Io { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    let mut base = TrainConfig::default();
    file.apply(&mut base, &GRID_KEYS).map_err(|e| CliError::Usage(e.to_string()))?;
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    base.layers = vec![file.layer(&GRID_KEYS)];
    let methods = parse_list(&file, "methods", Method::ALL.to_vec())?;
    let combos = parse_list(&file, "combos", Combo::PRESETS.to_vec())?;
    let seeds = parse_list(&file, "seeds", vec![0u64, 1, 2])?;
    Ok((base, trainer::grid(&methods, &combos, &seeds), file))
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let (base, cells, _) = resolve_sweep(&args.config)?;
    fs::create_dir_all(&args.out).map_err(runtime)?;
    println!("{} runs, {} at a time, under {}", cells.len(), args.jobs, args.out.display());
    let outcomes = trainer::run_grid(&base, &cells, &args.out, args.jobs, |o: &GridOutcome| match &o.result {
        Ok(m) => println!(
            "{} {}: kl {:.4} jsd {:.4} modes {}",
            o.cell.dir_name(),
            if o.reused { "(reused)" } else { "done" },
            m.kl,
            m.jsd,
            m.modes.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
        ),
        Err(e) => eprintln!("{} failed: {e}", o.cell.dir_name()),
    });
    let summary = args.out.join("summary.csv");
    trainer::write_grid_summary(&summary, &outcomes).map_err(runtime)?;
    let report = json!({
        "config": args.config.display().to_string(),
        "base": base,
        "jobs": args.jobs,
        "summary": "summary.csv",
        "runs": outcomes.iter().map(|o| json!({
            "cell": o.cell,
            "dir": o.dir.display().to_string(),
            "reused": o.reused,
            "error": o.result.as_ref().err(),
        })).collect::<Vec<_>>(),
    });
    fs::write(
        args.out.join("sweep.json"),
        serde_json::to_string_pretty(&report).map_err(runtime)? + "\n",
    )
    .map_err(runtime)?;
    println!("summary: {}", summary.display());
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} runs failed", outcomes.len())));
    }
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.run)?;
    let real_path = manifest
        .file(&args.run, "real_samples")
        .ok_or_else(|| CliError::Runtime("manifest lists no real samples".into()))?;
    let real = toydata::read_points_csv(&real_path).map_err(runtime)?;
    let (source, generated) = match manifest.file(&args.run, "samples_final") {
        Some(p) => {
            let pts = toydata::read_points_csv(&p).map_err(runtime)?;
            (p, pts)
        }
        None => generate_from_run(&args.run, &manifest, manifest.config.eval_samples)?,
    };
    let description = format!(
        "real: {}; generated: {}",
        real_path.display(),
        source.display()
    );
    let doc = svg::scatter(&manifest.title(), &description, &real, &generated);
    fs::write(&args.out, doc).map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
    println!("{} -> {}", args.run.display(), args.out.display());
    Ok(())
}
