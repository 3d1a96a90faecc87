//! Grid sweeps over the training margin and the TRADES regularization.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Method, RunConfig};
use super::train::{train, RunOutcome};
use crate::error::{Error, Result};
use crate::metrics::{select_checkpoint, ClassEval};

/// Mean ± std over seeds of one class (or the overall set when `class` is
/// `None`) at one swept value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// `"best"` (selected checkpoint) or `"last"` (final epoch).
    pub checkpoint: &'static str,
    pub class: Option<usize>,
    pub clean_mean: f64,
    pub clean_std: f64,
    pub robust_mean: f64,
    pub robust_std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub parameter: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, value: f64, checkpoint: &str, class: Option<usize>) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.checkpoint == checkpoint && r.class == class)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn pick(outcome: &RunOutcome, checkpoint: &str) -> Result<ClassEval> {
    let h = &outcome.history;
    let epoch = match checkpoint {
        "best" => select_checkpoint(h)?,
        _ => h.records.last().map(|r| r.epoch).unwrap_or(0),
    };
    Ok(h.records.iter().find(|r| r.epoch == epoch).expect("selected epoch exists").eval.clone())
}

fn run_grid(
    parameter: &str,
    base: &RunConfig,
    values: &[f64],
    seeds: &[u64],
    apply: impl Fn(&mut RunConfig, f64) + Sync,
) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one seed".into()));
    }
    let jobs: Vec<RunConfig> = values
        .iter()
        .flat_map(|&v| {
            seeds.iter().map(move |&s| (v, s))
        })
        .map(|(v, s)| {
            let mut c = base.clone();
            apply(&mut c, v);
            c.seed = s;
            c
        })
        .collect();
    for c in &jobs {
        c.validate()?;
    }
    let outcomes = jobs.par_iter().map(train).collect::<Result<Vec<_>>>()?;

    let k = outcomes[0].class_state.num_classes();
    let mut rows = Vec::new();
    for (vi, &value) in values.iter().enumerate() {
        let runs = &outcomes[vi * seeds.len()..(vi + 1) * seeds.len()];
        for checkpoint in ["best", "last"] {
            let evals = runs.iter().map(|o| pick(o, checkpoint)).collect::<Result<Vec<_>>>()?;
            let mut push = |class: Option<usize>, clean: Vec<f64>, robust: Vec<f64>| {
                let (clean_mean, clean_std) = mean_std(&clean);
                let (robust_mean, robust_std) = mean_std(&robust);
                rows.push(SweepRow {
                    value,
                    checkpoint,
                    class,
                    clean_mean,
                    clean_std,
                    robust_mean,
                    robust_std,
                    seeds: clean.len(),
                });
            };
            push(
                None,
                evals.iter().map(|e| e.overall_clean).collect(),
                evals.iter().map(|e| e.overall_robust).collect(),
            );
            for class in 0..k {
                push(
                    Some(class),
                    evals.iter().filter_map(|e| e.clean[class]).collect(),
                    evals.iter().filter_map(|e| e.robust[class]).collect(),
                );
            }
        }
    }
    Ok(SweepReport {
        parameter: parameter.to_string(),
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        rows,
    })
}

/// One run per training margin and seed; evaluation budget stays fixed.
pub fn sweep_margin(base: &RunConfig, eps_list: &[f64], seeds: &[u64]) -> Result<SweepReport> {
    if eps_list.len() < 2 {
        return Err(Error::InvalidParameter("margin sweep needs at least 2 margins".into()));
    }
    run_grid("eps", base, eps_list, seeds, |c, v| c.budget.eps_base = v)
}

/// One TRADES run per regularization strength and seed.
pub fn sweep_beta(base: &RunConfig, beta_list: &[f64], seeds: &[u64]) -> Result<SweepReport> {
    if base.method != Method::Trades {
        return Err(Error::InvalidParameter("beta sweep requires method=trades".into()));
    }
    if beta_list.is_empty() {
        return Err(Error::InvalidParameter("beta sweep needs at least one value".into()));
    }
    run_grid("beta", base, beta_list, seeds, |c, v| c.budget.beta_base = v)
}
