//! `cfa` — training runs, sweeps and analytic checks from the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cfa_core::analytic::{check_theorems, class_accuracy, ToyClass, ToyModelParams};
use cfa_core::experiment::{
    sweep_beta, sweep_margin, train, write_report, write_sweep_csv, RunConfig, RunOutcome, SweepReport,
};
use cfa_core::nn::save_checkpoint;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "cfa", version, about = "Class-wise calibrated fair adversarial training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write metrics, summary and checkpoints.
    Train(RunArgs),
    /// Train once per perturbation margin and tabulate class-wise results.
    SweepMargin {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated training margins.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Train TRADES once per regularization strength and tabulate class-wise results.
    SweepBeta {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated values of beta.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Check the binary toy-model theorems on a (w, eps) grid and print the report as JSON.
    ToyVerify {
        #[command(flatten)]
        toy: ToyArgs,
        #[arg(long, default_value_t = 0.01)]
        delta_w: f64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero when any theorem fails.
        #[arg(long)]
        check: bool,
    },
    /// Tabulate closed-form class accuracies over a (w, eval eps) grid as CSV.
    ToySweep {
        #[command(flatten)]
        toy: ToyArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `--set fawa.delta=0.3`.
    /// Values are parsed as JSON, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds; overrides the config seed.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Exit nonzero when a run violates a history invariant.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0.85)]
    p_plus: f64,
    #[arg(long, default_value_t = 0.70)]
    p_minus: f64,
    #[arg(long, default_value_t = 0.4)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.1)]
    w_min: f64,
    #[arg(long, default_value_t = 5.0)]
    w_max: f64,
    #[arg(long, default_value_t = 50)]
    w_steps: usize,
    /// Comma-separated perturbation budgets; defaults to a grid over [0, eta).
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
}

impl ToyArgs {
    fn params(&self) -> Result<ToyModelParams> {
        Ok(ToyModelParams::new(self.p_plus, self.p_minus, self.eta, self.d, self.sigma2)?)
    }

    fn w_grid(&self) -> Result<Vec<f64>> {
        if !(self.w_min > 0.0 && self.w_max > self.w_min) || self.w_steps < 2 {
            bail!("need 0 < w-min < w-max and w-steps >= 2");
        }
        let h = (self.w_max - self.w_min) / (self.w_steps - 1) as f64;
        Ok((0..self.w_steps).map(|i| self.w_min + h * i as f64).collect())
    }

    fn eps_grid(&self, upper: f64, n: usize) -> Vec<f64> {
        if !self.eps.is_empty() {
            return self.eps.clone();
        }
        (0..n).map(|i| upper * i as f64 / n as f64).collect()
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns `Ok(false)` when `--check` found a violation.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let seeds = seeds(&args, &cfg);
            let mut ok = true;
            for seed in seeds {
                let cfg = RunConfig { seed, ..cfg.clone() };
                let outcome = train(&cfg)?;
                let dir = args.out.join(format!("seed-{seed}"));
                let summary = write_report(&outcome.history, &cfg, &dir)?;
                save_checkpoint(&outcome.model, &dir.join("model"))?;
                if let Some(avg) = &outcome.averaged {
                    save_checkpoint(avg, &dir.join("averaged"))?;
                }
                println!(
                    "seed {seed}: best epoch {} avg/worst robust {:.4}/{:.4}, last {:.4}/{:.4} -> {}",
                    summary.best.epoch,
                    summary.best.avg_robust,
                    summary.best.worst_robust,
                    summary.last.avg_robust,
                    summary.last.worst_robust,
                    dir.display()
                );
                if args.check {
                    ok &= report_violations(seed, &outcome, &cfg);
                }
            }
            Ok(ok)
        }
        Command::SweepMargin { run, values } => {
            let cfg = load_config(&run)?;
            let report = sweep_margin(&cfg, &values, &seeds(&run, &cfg))?;
            finish_sweep(&report, &run, "sweep_margin.csv")
        }
        Command::SweepBeta { run, values } => {
            let cfg = load_config(&run)?;
            let report = sweep_beta(&cfg, &values, &seeds(&run, &cfg))?;
            finish_sweep(&report, &run, "sweep_beta.csv")
        }
        Command::ToyVerify { toy, delta_w, out, check } => {
            let params = toy.params()?;
            let eps = toy.eps_grid(params.eta, 10);
            let report = check_theorems(&params, &toy.w_grid()?, delta_w, &eps)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            for t in &report.theorems {
                eprintln!("{}: {} ({} points)", t.name, if t.passed { "pass" } else { "FAIL" }, t.points_checked);
            }
            Ok(!check || report.passed)
        }
        Command::ToySweep { toy, out } => {
            let params = toy.params()?;
            let eps = toy.eps_grid(2.0 * params.eta, 8).into_iter().chain(
                // Always include the full robust budget.
                toy.eps.is_empty().then_some(2.0 * params.eta),
            );
            let eps: Vec<f64> = eps.collect();
            let mut csv = String::from("w,eval_eps,class,accuracy\n");
            for w in toy.w_grid()? {
                for &e in &eps {
                    for y in ToyClass::BOTH {
                        let a = class_accuracy(&params, y, w, e)?;
                        writeln!(csv, "{w},{e},{},{a}", y.label()).unwrap();
                    }
                }
            }
            emit(out.as_deref(), &csv)?;
            Ok(true)
        }
    }
}

fn finish_sweep(report: &SweepReport, args: &RunArgs, file: &str) -> Result<bool> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join(file);
    write_sweep_csv(report, &path)?;
    println!("{} rows -> {}", report.rows.len(), path.display());
    Ok(true)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn seeds(args: &RunArgs, cfg: &RunConfig) -> Vec<u64> {
    if args.seed.is_empty() {
        vec![cfg.seed]
    } else {
        args.seed.clone()
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let partial: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut value, partial);
    }
    for o in &args.overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

/// Overlays `patch` onto `base` object by object. A tagged object whose
/// `kind` differs (e.g. another dataset type) replaces the base wholesale.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if p.get("kind").is_none() || p.get("kind") == b.get("kind") => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').with_context(|| format!("override {spec:?} is not KEY=VALUE"))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Some(obj) = node.as_object_mut() else {
            bail!("override {key:?}: {:?} is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one part")
}

/// Post-run invariant suite behind `--check`.
fn report_violations(seed: u64, outcome: &RunOutcome, cfg: &RunConfig) -> bool {
    let mut problems = Vec::new();
    let h = &outcome.history;
    if h.records.len() != cfg.epochs {
        problems.push(format!("{} records for {} epochs", h.records.len(), cfg.epochs));
    }
    let b = &cfg.budget;
    for r in &h.records {
        for k in 0..r.eps.len() {
            let (c, rob) = (r.eval.clean[k], r.eval.robust[k]);
            if let (Some(c), Some(rob)) = (c, rob) {
                if !(0.0..=1.0).contains(&c) || rob > c {
                    problems.push(format!("epoch {} class {k}: clean {c} robust {rob}", r.epoch));
                }
            }
            let eps_hi = if cfg.ccm { (b.lambda1 + 1.0) * b.eps_base } else { b.eps_base };
            let eps_lo = if cfg.ccm { b.lambda1 * b.eps_base } else { b.eps_base };
            if r.eps[k] < eps_lo - 1e-12 || r.eps[k] > eps_hi + 1e-12 {
                problems.push(format!("epoch {} class {k}: eps {} outside [{eps_lo}, {eps_hi}]", r.epoch, r.eps[k]));
            }
        }
    }
    for p in &problems {
        eprintln!("seed {seed}: invariant violated: {p}");
    }
    problems.is_empty()
}
