//! Per-class evaluation and the statistics built on it.

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_ce, AttackConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::DenseNet;

/// Rows per evaluation chunk. Each chunk draws its attack randomness from its
/// own ChaCha stream, so results do not depend on the thread count.
const EVAL_CHUNK: usize = 256;

/// Clean and robust accuracy per class. Classes absent from the evaluation set
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub clean: Vec<Option<f64>>,
    pub robust: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub overall_clean: f64,
    pub overall_robust: f64,
}

impl ClassEval {
    pub fn worst_robust(&self) -> f64 {
        worst_and_average(&self.robust).map(|s| s.worst).unwrap_or(f64::NAN)
    }

    pub fn summary(&self) -> Result<RobustSummary> {
        worst_and_average(&self.robust)
    }
}

/// Accuracy of `net` on `dataset`, clean and under `pgd_ce` at `attack.eps`.
pub fn evaluate(net: &DenseNet, dataset: &LabeledDataset, attack: &AttackConfig) -> Result<ClassEval> {
    attack.validate()?;
    let k = dataset.num_classes;
    if net.num_classes() != k {
        return Err(Error::ShapeMismatch(format!(
            "network has {} outputs, dataset {} classes",
            net.num_classes(),
            k
        )));
    }
    let n = dataset.len();
    let chunks: Vec<usize> = (0..n.div_ceil(EVAL_CHUNK)).collect();
    let per_chunk = chunks
        .par_iter()
        .map(|&c| -> Result<(Vec<usize>, Vec<usize>)> {
            let lo = c * EVAL_CHUNK;
            let hi = (lo + EVAL_CHUNK).min(n);
            let x = dataset.features.slice_axis(Axis(0), (lo..hi).into());
            let y = &dataset.labels[lo..hi];
            let clean_pred = net.predict(x)?;
            let mut rng = ChaCha8Rng::seed_from_u64(attack.seed);
            rng.set_stream(c as u64);
            let eps = vec![attack.eps; hi - lo];
            let mut cfg = attack.clone();
            cfg.domain_bounds = cfg.domain_bounds.or(dataset.bounds);
            let adv = pgd_ce(net, x, y, &eps, &cfg, &mut rng)?;
            let adv_pred = net.predict(adv.view())?;
            let mut clean = vec![0; k];
            let mut robust = vec![0; k];
            for ((&l, &pc), &pa) in y.iter().zip(&clean_pred).zip(&adv_pred) {
                if pc == l {
                    clean[l] += 1;
                }
                // The clean point is inside the ball, so a clean miss is never robust.
                if pc == l && pa == l {
                    robust[l] += 1;
                }
            }
            Ok((clean, robust))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut clean = vec![0usize; k];
    let mut robust = vec![0usize; k];
    for (c, r) in per_chunk {
        for j in 0..k {
            clean[j] += c[j];
            robust[j] += r[j];
        }
    }
    let counts = dataset.class_counts();
    let rate = |hits: &[usize]| -> Vec<Option<f64>> {
        hits.iter()
            .zip(&counts)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect()
    };
    let total = n.max(1) as f64;
    Ok(ClassEval {
        clean: rate(&clean),
        robust: rate(&robust),
        overall_clean: clean.iter().sum::<usize>() as f64 / total,
        overall_robust: robust.iter().sum::<usize>() as f64 / total,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustSummary {
    pub average: f64,
    pub worst: f64,
    pub worst_class: usize,
}

/// Mean and minimum over the classes present; ties go to the lowest class index.
pub fn worst_and_average(per_class: &[Option<f64>]) -> Result<RobustSummary> {
    let present: Vec<(usize, f64)> = per_class
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect();
    if present.is_empty() {
        return Err(Error::InvalidParameter("no class present".into()));
    }
    let average = present.iter().map(|(_, v)| v).sum::<f64>() / present.len() as f64;
    let (worst_class, worst) = present
        .iter()
        .copied()
        .fold((usize::MAX, f64::INFINITY), |best, (k, v)| if v < best.1 { (k, v) } else { best });
    Ok(RobustSummary {
        average,
        worst,
        worst_class,
    })
}

/// `|worst_t - worst_{t-1}|` for consecutive checkpoints.
pub fn fluctuation_series(worst: &[f64]) -> Result<Vec<f64>> {
    if worst.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "fluctuation needs at least 2 epochs, got {}",
            worst.len()
        )));
    }
    Ok(worst.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
}

/// Population variance of the per-class values present.
pub fn class_variance(per_class: &[Option<f64>]) -> Result<f64> {
    let v: Vec<f64> = per_class.iter().flatten().copied().collect();
    if v.len() < 2 {
        return Err(Error::InvalidParameter("variance needs at least 2 classes".into()));
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok(v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64)
}

/// Index of the highest `overall + worst`; ties go to the earliest entry.
pub fn select_by_score(scores: &[(f64, f64)]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("no checkpoints to select from".into()));
    }
    let mut best = 0;
    for (i, &(overall, worst)) in scores.iter().enumerate() {
        if overall + worst > scores[best].0 + scores[best].1 {
            best = i;
        }
    }
    Ok(best)
}

/// One epoch of training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Evaluation of the reported model: the averaged model when averaging
    /// is enabled, the live model otherwise.
    pub eval: ClassEval,
    /// Evaluation of the live model when it differs from the reported one.
    pub live_eval: Option<ClassEval>,
    pub tracked: Vec<Option<f64>>,
    pub eps: Vec<f64>,
    pub beta: Vec<f64>,
    pub worst_val_robust: Option<f64>,
    pub averaging_accepted: Option<bool>,
}

impl EpochRecord {
    pub fn live(&self) -> &ClassEval {
        self.live_eval.as_ref().unwrap_or(&self.eval)
    }

    pub fn worst_robust(&self) -> f64 {
        self.eval.worst_robust()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl RunHistory {
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::InvalidParameter(format!(
                    "epoch {} does not follow {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Worst-class robust accuracy of the reported model, per epoch.
    pub fn worst_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eval.worst_robust()).collect()
    }

    /// Worst-class robust accuracy of the live model, per epoch.
    pub fn live_worst_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.live().worst_robust()).collect()
    }
}

/// Epoch of the reported model with the highest overall + worst-class
/// robustness, ties to the earliest. When the history contains averaged-model
/// evaluations, only those epochs compete: a run with averaging reports an
/// averaged checkpoint.
pub fn select_checkpoint(history: &RunHistory) -> Result<usize> {
    let averaged = history.records.iter().any(|r| r.live_eval.is_some());
    let candidates: Vec<&EpochRecord> = history
        .records
        .iter()
        .filter(|r| !averaged || r.live_eval.is_some())
        .collect();
    let scores: Vec<(f64, f64)> = candidates
        .iter()
        .map(|r| (r.eval.overall_robust, r.eval.worst_robust()))
        .collect();
    Ok(candidates[select_by_score(&scores)?].epoch)
}
