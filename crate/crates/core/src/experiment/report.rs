//! Files written for a finished run or sweep.
//!
//! - `metrics.csv`: `epoch,class,clean,robust,t_k,eps_k,beta_k`, one row per
//!   epoch and class (reported model; blank cells for absent values).
//! - `averaging.csv`: `epoch,worst_val_robust,fawa_accepted`.
//! - `summary.json`: best (selected) and last checkpoints.
//! - `config.json`: the configuration echo.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use super::sweep::SweepReport;
use crate::attacks::AttackConfig;
use crate::error::{Error, Result};
use crate::metrics::{class_variance, select_checkpoint, EpochRecord, RunHistory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointSummary {
    pub epoch: usize,
    pub avg_clean: f64,
    pub worst_clean: f64,
    pub avg_robust: f64,
    pub worst_robust: f64,
    pub worst_class: usize,
    pub class_variance: f64,
    pub clean: Vec<Option<f64>>,
    pub robust: Vec<Option<f64>>,
}

impl CheckpointSummary {
    pub fn from_record(r: &EpochRecord) -> Result<Self> {
        let robust = r.eval.summary()?;
        let clean = crate::metrics::worst_and_average(&r.eval.clean)?;
        Ok(CheckpointSummary {
            epoch: r.epoch,
            avg_clean: r.eval.overall_clean,
            worst_clean: clean.worst,
            avg_robust: r.eval.overall_robust,
            worst_robust: robust.worst,
            worst_class: robust.worst_class,
            class_variance: class_variance(&r.eval.robust)?,
            clean: r.eval.clean.clone(),
            robust: r.eval.robust.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub best: CheckpointSummary,
    pub last: CheckpointSummary,
    pub robustness: &'static str,
    pub eval_attack: AttackConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl RunSummary {
    pub fn new(history: &RunHistory, cfg: &RunConfig) -> Result<Self> {
        let best_epoch = select_checkpoint(history)?;
        let best = history.records.iter().find(|r| r.epoch == best_epoch).expect("selected epoch exists");
        let last = history.records.last().expect("non-empty history");
        Ok(RunSummary {
            best: CheckpointSummary::from_record(best)?,
            last: CheckpointSummary::from_record(last)?,
            robustness: "pgd-attack accuracy (empirical upper bound on certified robustness)",
            eval_attack: cfg.eval_attack.clone(),
            config_hash: history.config_hash.clone(),
            seeds: history.seeds.clone(),
        })
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn metrics_csv(history: &RunHistory) -> String {
    let mut out = String::from("epoch,class,clean,robust,t_k,eps_k,beta_k\n");
    for r in &history.records {
        for k in 0..r.eval.clean.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                k,
                cell(r.eval.clean[k]),
                cell(r.eval.robust[k]),
                cell(r.tracked[k]),
                r.eps[k],
                r.beta[k]
            )
            .unwrap();
        }
    }
    out
}

pub fn averaging_csv(history: &RunHistory) -> String {
    let mut out = String::from("epoch,worst_val_robust,fawa_accepted\n");
    for r in &history.records {
        let accepted = r.averaging_accepted.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.epoch, cell(r.worst_val_robust), accepted).unwrap();
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the run files into `out_dir`, creating it if needed. Output is a
/// pure function of `(history, cfg)`.
pub fn write_report(history: &RunHistory, cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = RunSummary::new(history, cfg)?;
    write(&out_dir.join("metrics.csv"), &metrics_csv(history))?;
    write(&out_dir.join("averaging.csv"), &averaging_csv(history))?;
    write(&out_dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    write(&out_dir.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    Ok(summary)
}

/// `parameter,value,checkpoint,class,clean_mean,clean_std,robust_mean,robust_std,seeds`
pub fn write_sweep_csv(report: &SweepReport, path: &Path) -> Result<()> {
    let mut out = String::from("parameter,value,checkpoint,class,clean_mean,clean_std,robust_mean,robust_std,seeds\n");
    for r in &report.rows {
        let class = r.class.map(|c| c.to_string()).unwrap_or_else(|| "all".into());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            report.parameter, r.value, r.checkpoint, class, r.clean_mean, r.clean_std, r.robust_mean, r.robust_std, r.seeds
        )
        .unwrap();
    }
    write(path, &out)
}
