//! Datasets: synthetic generators, CSV ingestion and stratified splits.
//!
//! CSV layout:
//!
//! ```text
//! # classes=K dims=D lo=<v|none> hi=<v|none>
//! label,f1,...,fD
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analytic::{sample_dataset, ToyModelParams};
use crate::error::{Error, Result};
use crate::nn::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub bounds: Option<(f64, f64)>,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Dataset(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!("label {l} >= {num_classes} classes")));
        }
        if let Some((lo, hi)) = bounds {
            if !(lo < hi) {
                return Err(Error::Dataset(format!("bounds need lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            bounds: self.bounds,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Batch::new(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }
}

/// K-class generalization of the binary toy distribution.
///
/// Each example of class `k` carries a `K`-wide robust block equal to
/// `2·onehot(h) - 1`, where `h = k` with probability `reliabilities[k]` and
/// otherwise a uniformly drawn other class. The remaining `d` non-robust
/// features are Gaussian with variance `sigma2`; feature `j` belongs to class
/// `j mod K`, and class `k` shifts its own features to mean `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSpec {
    pub reliabilities: Vec<f64>,
    pub eta: f64,
    pub d: usize,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    pub n: usize,
}

fn default_sigma2() -> f64 {
    1.0
}

impl MultiSpec {
    pub fn num_classes(&self) -> usize {
        self.reliabilities.len()
    }

    pub fn dim(&self) -> usize {
        self.num_classes() + self.d
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if k < 2 {
            return Err(Error::InvalidConfig("multi-class spec needs K >= 2".into()));
        }
        if let Some(p) = self.reliabilities.iter().find(|p| !(**p > 0.5 && **p < 1.0)) {
            return Err(Error::InvalidConfig(format!("reliability {p} outside (0.5, 1)")));
        }
        if !(self.eta > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::InvalidConfig("eta and sigma2 must be positive".into()));
        }
        if self.d < k {
            return Err(Error::InvalidConfig(format!("d={} gives some class no non-robust feature (K={k})", self.d)));
        }
        if self.n < k {
            return Err(Error::InvalidConfig(format!("n={} smaller than K={k}", self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    SyntheticBinary { params: ToyModelParams, n: usize },
    SyntheticMulti(MultiSpec),
    File {
        path: PathBuf,
        #[serde(default)]
        bounds: Option<(f64, f64)>,
    },
    /// Named preset: `toy-paper-binary` or `multi4-easyhard`.
    Preset { name: String, n: usize },
}

pub const PRESET_NAMES: [&str; 2] = ["toy-paper-binary", "multi4-easyhard"];

impl DatasetSpec {
    /// Binary toy data with the visualization variance `σ² = 0.6`.
    pub fn toy_paper_binary(n: usize) -> Self {
        DatasetSpec::SyntheticBinary {
            params: ToyModelParams::visualization(),
            n,
        }
    }

    /// Four classes, two easy (`p = 0.95, 0.90`) and two hard (`0.75, 0.70`),
    /// eight non-robust features per class. At `eta = 0.6` and an evaluation
    /// budget of 0.1, easy-class robustness keeps rising with the training
    /// margin while hard classes peak in between.
    pub fn multi4_easyhard(n: usize) -> Self {
        DatasetSpec::SyntheticMulti(MultiSpec {
            reliabilities: vec![0.95, 0.90, 0.75, 0.70],
            eta: 0.6,
            d: 32,
            sigma2: 1.0,
            n,
        })
    }

    pub fn preset(name: &str, n: usize) -> Result<Self> {
        match name {
            "toy-paper-binary" => Ok(Self::toy_paper_binary(n)),
            "multi4-easyhard" => Ok(Self::multi4_easyhard(n)),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset preset {other:?}; expected one of {PRESET_NAMES:?}"
            ))),
        }
    }

    /// Replaces a named preset by its concrete spec.
    pub fn resolve(&self) -> Result<DatasetSpec> {
        match self {
            DatasetSpec::Preset { name, n } => DatasetSpec::preset(name, *n),
            other => Ok(other.clone()),
        }
    }

    /// Same distribution with a different sample count. File sources are unchanged.
    pub fn with_n(&self, n: usize) -> Result<DatasetSpec> {
        Ok(match self.resolve()? {
            DatasetSpec::SyntheticBinary { params, .. } => DatasetSpec::SyntheticBinary { params, n },
            DatasetSpec::SyntheticMulti(m) => DatasetSpec::SyntheticMulti(MultiSpec { n, ..m }),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.resolve()? {
            DatasetSpec::SyntheticBinary { params, n } => {
                params.validate()?;
                if n < 2 {
                    return Err(Error::InvalidConfig("binary dataset needs n >= 2".into()));
                }
                Ok(())
            }
            DatasetSpec::SyntheticMulti(m) => m.validate(),
            DatasetSpec::File { .. } | DatasetSpec::Preset { .. } => Ok(()),
        }
    }
}

/// Materializes a dataset spec, deterministically per `seed`.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    match spec.resolve()? {
        DatasetSpec::SyntheticBinary { params, n } => {
            let sample = sample_dataset(&params, n, seed)?;
            let labels = sample.labels.iter().map(|y| y.index()).collect();
            LabeledDataset::new(sample.features, labels, 2, None)
        }
        DatasetSpec::SyntheticMulti(m) => Ok(generate_multi(&m, seed)),
        DatasetSpec::File { path, bounds } => {
            let mut ds = load_file(&path)?;
            if bounds.is_some() {
                ds.bounds = bounds;
            }
            Ok(ds)
        }
        DatasetSpec::Preset { .. } => unreachable!("resolved above"),
    }
}

fn generate_multi(spec: &MultiSpec, seed: u64) -> LabeledDataset {
    let k = spec.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma2.sqrt()).expect("sigma2 validated");
    // Balanced label sequence (remainder drawn at random), then shuffled, so
    // n = K yields each class exactly once.
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % k).collect();
    let tail = spec.n - spec.n % k;
    for l in labels.iter_mut().skip(tail) {
        *l = rng.random_range(0..k);
    }
    labels.shuffle(&mut rng);

    let mut features = Array2::zeros((spec.n, spec.dim()));
    for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
        let hot = if rng.random_bool(spec.reliabilities[y]) {
            y
        } else {
            let other = rng.random_range(0..k - 1);
            if other >= y {
                other + 1
            } else {
                other
            }
        };
        for j in 0..k {
            row[j] = if j == hot { 1.0 } else { -1.0 };
        }
        for j in 0..spec.d {
            let mean = if j % k == y { spec.eta } else { 0.0 };
            row[k + j] = mean + noise.sample(&mut rng);
        }
    }
    LabeledDataset {
        features,
        labels,
        num_classes: k,
        bounds: None,
    }
}

/// Stratified split: `max(1, round(fraction·n_k))` examples of each class go
/// to the validation set. Both parts keep the original row order.
pub fn split_validation(
    dataset: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let min_per_class = (1.0 / fraction).ceil() as usize;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_valid = vec![false; dataset.len()];
    for (k, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < min_per_class {
            return Err(Error::Dataset(format!(
                "class {k} has {} examples; fraction {fraction} needs at least {min_per_class}",
                idx.len()
            )));
        }
        let take = ((fraction * idx.len() as f64).round() as usize).max(1);
        idx.shuffle(&mut rng);
        for &i in &idx[..take] {
            is_valid[i] = true;
        }
    }
    let (valid, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| is_valid[i]);
    Ok((dataset.subset(&train), dataset.subset(&valid)))
}

fn fmt_bound(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:?}"))
}

pub fn save_file(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = format!(
        "# classes={} dims={} lo={} hi={}\n",
        dataset.num_classes,
        dataset.dim(),
        fmt_bound(dataset.bounds.map(|b| b.0)),
        fmt_bound(dataset.bounds.map(|b| b.1)),
    );
    for (row, &l) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        out.push_str(&l.to_string());
        for v in row {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_file(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| err(1, "missing '# classes=K dims=D lo=.. hi=..' header".into()))?;
    let (mut classes, mut dims, mut lo, mut hi) = (None, None, None, None);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed header field {field:?}")))?;
        let bound = |v: &str| -> Result<Option<f64>> {
            if v == "none" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| err(1, format!("bad bound {v:?}")))
            }
        };
        match key {
            "classes" => classes = Some(value.parse::<usize>().map_err(|_| err(1, format!("bad classes {value:?}")))?),
            "dims" => dims = Some(value.parse::<usize>().map_err(|_| err(1, format!("bad dims {value:?}")))?),
            "lo" => lo = Some(bound(value)?),
            "hi" => hi = Some(bound(value)?),
            other => return Err(err(1, format!("unknown header key {other:?}"))),
        }
    }
    let classes = classes.ok_or_else(|| err(1, "header lacks classes=".into()))?;
    let dims = dims.ok_or_else(|| err(1, "header lacks dims=".into()))?;
    let bounds = match (lo.flatten(), hi.flatten()) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => return Err(err(1, "lo and hi must both be set or both be none".into())),
    };

    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| err(line_no, "bad label".into()))?;
        if label >= classes {
            return Err(err(line_no, format!("label {label} >= classes={classes}")));
        }
        let before = values.len();
        for f in fields {
            values.push(f.trim().parse::<f64>().map_err(|_| err(line_no, format!("bad value {f:?}")))?);
        }
        if values.len() - before != dims {
            return Err(err(line_no, format!("expected {dims} features, got {}", values.len() - before)));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    let features = Array2::from_shape_vec((labels.len(), dims), values).expect("row widths checked");
    LabeledDataset::new(features, labels, classes, bounds)
}
