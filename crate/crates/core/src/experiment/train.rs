//! The calibrated adversarial training loop.
//!
//! Per epoch, in order: minibatch updates (attack each example at its class
//! margin, take the AT or TRADES loss, SGD step) while tallying robust train
//! accuracy; close the tally into `t_k`; recalibrate margins and
//! regularization for the next epoch; run the averaging gate; evaluate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{derive_seed, Method, RunConfig, Variant};
use crate::attacks::{pgd_ce, pgd_kl};
use crate::averaging::{AveragedModel, AveragingMode, StepOutcome};
use crate::data::{generate, split_validation, LabeledDataset};
use crate::error::Result;
use crate::metrics::{evaluate, EpochRecord, RunHistory};
use crate::nn::{sgd_step, ArchSpec, DenseNet, OptState};
use crate::schedules::{at_loss, trades_cfa_loss, trades_loss, ClassState};

const TAG_DATA: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_SPLIT: u64 = 3;
const TAG_INIT: u64 = 4;
const TAG_SHUFFLE: u64 = 5;
const TAG_ATTACK: u64 = 6;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: DenseNet,
    /// Averaged weights, when averaging was enabled and at least one checkpoint entered.
    pub averaged: Option<DenseNet>,
    pub history: RunHistory,
    pub class_state: ClassState,
    /// Threshold the averaging gate actually used.
    pub delta: f64,
}

struct Splits {
    train: LabeledDataset,
    valid: Option<LabeledDataset>,
    test: LabeledDataset,
}

fn build_splits(cfg: &RunConfig) -> Result<Splits> {
    let pool = generate(&cfg.dataset, derive_seed(cfg.seed, TAG_DATA))?;
    let test = match &cfg.test_dataset {
        Some(spec) => generate(spec, derive_seed(cfg.seed, TAG_TEST))?,
        None => generate(&cfg.dataset.with_n(cfg.test_size)?, derive_seed(cfg.seed, TAG_TEST))?,
    };
    let (train, valid) = if cfg.valid_fraction > 0.0 {
        let (t, v) = split_validation(&pool, cfg.valid_fraction, derive_seed(cfg.seed, TAG_SPLIT))?;
        (t, Some(v))
    } else {
        (pool, None)
    };
    Ok(Splits { train, valid, test })
}

/// δ for the averaging gate: 40% of the mean worst-class validation
/// robustness an EMA baseline reaches from `start_epoch` on.
pub fn auto_delta(baseline: &RunHistory, start_epoch: usize) -> f64 {
    let vals: Vec<f64> = baseline
        .records
        .iter()
        .filter(|r| r.epoch >= start_epoch)
        .filter_map(|r| r.worst_val_robust)
        .collect();
    if vals.is_empty() {
        return 0.0;
    }
    0.4 * vals.iter().sum::<f64>() / vals.len() as f64
}

/// Runs one training job. Configuration errors surface before any compute.
pub fn train(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut delta = cfg.fawa.delta;
    if cfg.averaging == AveragingMode::Fawa && cfg.fawa.delta_auto {
        let mut base = cfg.clone();
        base.averaging = AveragingMode::Ema;
        base.fawa.delta_auto = false;
        let baseline = train(&base)?;
        delta = auto_delta(&baseline.history, cfg.fawa_start_epoch());
    }
    train_with_delta(cfg, delta)
}

fn train_with_delta(cfg: &RunConfig, delta: f64) -> Result<RunOutcome> {
    let splits = build_splits(cfg)?;
    let train_set = &splits.train;
    let k = train_set.num_classes;
    let arch = ArchSpec::mlp(train_set.dim(), &cfg.hidden, k);
    let mut net = DenseNet::init(&arch, derive_seed(cfg.seed, TAG_INIT))?;
    let mut opt = OptState::new(&net, cfg.sgd_config())?;
    let mut state = ClassState::new(k, &cfg.budget);
    let mut averaged = match cfg.averaging {
        AveragingMode::None => None,
        _ => Some(AveragedModel::new(&net, cfg.fawa.decay, cfg.fawa_start_epoch(), delta)?),
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_SHUFFLE));
    let mut attack_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_ATTACK));
    let mut attack = cfg.train_attack_config(0);
    attack.domain_bounds = train_set.bounds;
    let mut eval_attack = cfg.eval_attack.clone();
    eval_attack.domain_bounds = eval_attack.domain_bounds.or(splits.test.bounds);

    let mut history = RunHistory {
        records: Vec::with_capacity(cfg.epochs),
        config_hash: cfg.hash(),
        seeds: vec![
            cfg.seed,
            derive_seed(cfg.seed, TAG_DATA),
            derive_seed(cfg.seed, TAG_INIT),
            derive_seed(cfg.seed, TAG_SHUFFLE),
            derive_seed(cfg.seed, TAG_ATTACK),
        ],
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        let eps_in_effect = state.eps().to_vec();
        let beta_in_effect = state.beta().to_vec();
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch = train_set.batch(idx)?;
            let x = batch.inputs.view();
            let y = &batch.labels;
            let eps = state.eps_for(y);
            let (x_adv, grads) = match cfg.method {
                Method::At => {
                    let x_adv = pgd_ce(&net, x, y, &eps, &attack, &mut attack_rng)?;
                    let (_, grads) = at_loss(&net, x_adv.view(), y)?;
                    (x_adv, grads)
                }
                Method::Trades => {
                    let x_adv = pgd_kl(&net, x, &eps, &attack, &mut attack_rng)?;
                    let (_, grads) = if cfg.ccr {
                        trades_cfa_loss(&net, x, x_adv.view(), y, &state.beta_for(y))?
                    } else {
                        trades_loss(&net, x, x_adv.view(), y, cfg.budget.beta_base)?
                    };
                    (x_adv, grads)
                }
            };
            if !cfg.dedicated_t_pass {
                state.record(y, &net.predict(x_adv.view())?)?;
            }
            sgd_step(&mut net, &grads, &mut opt)?;
        }
        if cfg.dedicated_t_pass {
            for idx in order.chunks(cfg.batch_size) {
                let batch = train_set.batch(idx)?;
                let eps = state.eps_for(&batch.labels);
                let x_adv = pgd_ce(&net, batch.inputs.view(), &batch.labels, &eps, &attack, &mut attack_rng)?;
                state.record(&batch.labels, &net.predict(x_adv.view())?)?;
            }
        }
        state.end_epoch();
        let tracked = state.tracked().to_vec();
        state.calibrate(&cfg.budget, cfg.ccm, cfg.ccr)?;

        let worst_val_robust = match &splits.valid {
            Some(valid) => Some(evaluate(&net, valid, &eval_attack)?.worst_robust()),
            None => None,
        };
        let accepted = match (&mut averaged, cfg.averaging) {
            (Some(avg), AveragingMode::Ema) => Some(avg.ema_step(&net, epoch)?),
            (Some(avg), AveragingMode::Fawa) => {
                Some(avg.fawa_step(&net, worst_val_robust.expect("fawa has a validation split"), epoch)?)
            }
            _ => None,
        };

        let live_eval = evaluate(&net, &splits.test, &eval_attack)?;
        let (eval, live_eval) = match &averaged {
            Some(avg) if avg.is_initialized() => (evaluate(avg.model(), &splits.test, &eval_attack)?, Some(live_eval)),
            _ => (live_eval, None),
        };
        history.push(EpochRecord {
            epoch,
            eval,
            live_eval,
            tracked,
            eps: eps_in_effect,
            beta: beta_in_effect,
            worst_val_robust,
            averaging_accepted: accepted.map(|o| o == StepOutcome::Accepted),
        })?;
    }

    Ok(RunOutcome {
        model: net,
        averaged: averaged.filter(|a| a.is_initialized()).map(|a| a.model().clone()),
        history,
        class_state: state,
        delta,
    })
}

/// Runs `cfg` once per seed, in parallel. Results are ordered like `seeds`.
pub fn run_seeds(cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            train(&c)
        })
        .collect()
}

impl RunConfig {
    /// Convenience: preset with a seed.
    pub fn seeded(method: Method, variant: Variant, seed: u64) -> Self {
        RunConfig {
            seed,
            ..RunConfig::preset(method, variant)
        }
    }
}
