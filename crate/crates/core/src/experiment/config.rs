use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, StepSize};
use crate::averaging::AveragingMode;
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::nn::SgdConfig;
use crate::schedules::BudgetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    At,
    Trades,
}

/// Named method combinations used in comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Ema,
    Cfa,
}

/// PGD settings for crafting training examples; the budget itself comes from
/// the (possibly class-calibrated) margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainAttackConfig {
    pub steps: usize,
    pub step: StepSize,
    pub random_start: bool,
}

impl Default for TrainAttackConfig {
    fn default() -> Self {
        TrainAttackConfig {
            steps: 10,
            step: StepSize::EpsFraction(0.25),
            random_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of the run after which the learning rate drops tenfold.
    pub milestone_fractions: Vec<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestone_fractions: vec![0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FawaConfig {
    /// Worst-class validation robustness a checkpoint must reach.
    pub delta: f64,
    /// Replace `delta` by 40% of an EMA baseline's mean worst-class
    /// validation robustness.
    pub delta_auto: bool,
    pub decay: f64,
    /// First epoch (0-based) that may enter the average; defaults to 25% of the run.
    pub start_epoch: Option<usize>,
}

impl Default for FawaConfig {
    fn default() -> Self {
        FawaConfig {
            delta: 0.2,
            delta_auto: false,
            decay: 0.85,
            start_epoch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Size of the held-out test set drawn from the same synthetic
    /// distribution. Ignored when `test_dataset` is given.
    pub test_size: usize,
    pub test_dataset: Option<DatasetSpec>,
    pub hidden: Vec<usize>,
    pub method: Method,
    pub ccm: bool,
    pub ccr: bool,
    pub averaging: AveragingMode,
    pub budget: BudgetConfig,
    pub train_attack: TrainAttackConfig,
    pub eval_attack: AttackConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub valid_fraction: f64,
    pub fawa: FawaConfig,
    /// Measure `t_k` with a separate PGD pass over the training set at the end
    /// of each epoch instead of reusing the training adversarial examples.
    pub dedicated_t_pass: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::multi4_easyhard(4000),
            test_size: 2000,
            test_dataset: None,
            hidden: vec![32],
            method: Method::At,
            ccm: false,
            ccr: false,
            averaging: AveragingMode::None,
            budget: BudgetConfig::default(),
            train_attack: TrainAttackConfig::default(),
            eval_attack: AttackConfig {
                seed: 0x5eed,
                ..AttackConfig::pgd10(0.1)
            },
            optim: OptimConfig::default(),
            epochs: 40,
            batch_size: 128,
            valid_fraction: 0.02,
            fawa: FawaConfig::default(),
            dedicated_t_pass: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Desk-scale defaults for `method` combined with `variant`:
    /// plain training, +EMA, or +CFA (calibrated margin, calibrated
    /// regularization for TRADES, and fairness-gated averaging).
    pub fn preset(method: Method, variant: Variant) -> Self {
        let mut cfg = RunConfig {
            method,
            ..RunConfig::default()
        };
        cfg.budget.lambda1 = match method {
            Method::At => 0.5,
            Method::Trades => 0.3,
        };
        match variant {
            Variant::Plain => {}
            Variant::Ema => cfg.averaging = AveragingMode::Ema,
            Variant::Cfa => {
                cfg.ccm = true;
                cfg.ccr = method == Method::Trades;
                cfg.averaging = AveragingMode::Fawa;
            }
        }
        cfg
    }

    pub fn fawa_start_epoch(&self) -> usize {
        self.fawa.start_epoch.unwrap_or(self.epochs / 4)
    }

    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            lr: self.optim.lr,
            momentum: self.optim.momentum,
            weight_decay: self.optim.weight_decay,
            milestones: self
                .optim
                .milestone_fractions
                .iter()
                .map(|f| (f * self.epochs as f64).round() as usize)
                .collect(),
        }
    }

    pub fn train_attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            eps: self.budget.eps_base,
            step: self.train_attack.step,
            steps: self.train_attack.steps,
            random_start: self.train_attack.random_start,
            domain_bounds: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if let Some(t) = &self.test_dataset {
            t.validate()?;
        }
        self.budget.validate()?;
        self.eval_attack.validate()?;
        self.train_attack_config(0).validate()?;
        self.sgd_config().validate()?;
        if self.ccr && self.method != Method::Trades {
            return Err(Error::InvalidConfig("ccr requires method=trades".into()));
        }
        if self.averaging == AveragingMode::Fawa && self.valid_fraction <= 0.0 {
            return Err(Error::InvalidConfig("fawa requires valid_fraction > 0".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::InvalidConfig(format!(
                "valid_fraction must lie in [0, 1), got {}",
                self.valid_fraction
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(self.fawa.decay > 0.0 && self.fawa.decay < 1.0) {
            return Err(Error::InvalidConfig(format!("fawa.decay must lie in (0, 1), got {}", self.fawa.decay)));
        }
        if !(0.0..=1.0).contains(&self.fawa.delta) {
            return Err(Error::InvalidConfig(format!("fawa.delta must lie in [0, 1], got {}", self.fawa.delta)));
        }
        if matches!(self.dataset.resolve()?, DatasetSpec::File { .. }) && self.test_dataset.is_none() {
            return Err(Error::InvalidConfig("file datasets need an explicit test_dataset".into()));
        }
        Ok(())
    }

    /// FNV-1a of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Independent sub-seed for purpose `tag` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        for m in [Method::At, Method::Trades] {
            for v in [Variant::Plain, Variant::Ema, Variant::Cfa] {
                RunConfig::preset(m, v).validate().unwrap();
            }
        }
    }

    #[test]
    fn invalid_combinations_rejected() {
        let mut cfg = RunConfig::default();
        cfg.ccr = true;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::preset(Method::At, Variant::Cfa);
        cfg.valid_fraction = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn milestones_follow_epochs() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.sgd_config().milestones, vec![20, 30]);
        assert_eq!(cfg.fawa_start_epoch(), 10);
    }

    #[test]
    fn config_json_roundtrip_and_hash() {
        let cfg = RunConfig::preset(Method::Trades, Variant::Cfa);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
        let partial: RunConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
