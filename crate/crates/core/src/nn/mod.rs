//! Dense feed-forward network with exact reverse-mode gradients.
//!
//! Weights are stored as `(out, in)` matrices; a batch of inputs is an
//! `(m, in)` matrix and produces `(m, num_classes)` logits. The final layer is
//! always the identity so the network emits raw logits.

mod checkpoint;
mod loss;
mod optim;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointLayout, LayerLayout};
pub use loss::{
    kl_divergence, log_softmax, softmax, softmax_cross_entropy, weighted_cross_entropy,
    weighted_kl_divergence, KlOutput,
};
pub use optim::{sgd_step, OptState, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Layer widths of a multilayer perceptron with relu hidden layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl ArchSpec {
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        ArchSpec {
            input_dim,
            hidden: hidden.to_vec(),
            num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Activations recorded by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// All entries in layer order, weight (row-major) before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.layers.len()
            && net.layers.iter().zip(&self.weights).all(|(l, w)| l.weight.dim() == w.dim())
            && net.layers.iter().zip(&self.biases).all(|(l, b)| l.bias.dim() == b.dim())
    }
}

/// A labeled minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::ShapeMismatch("batch must hold at least one example".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ShapeMismatch(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn relu_in_place(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

impl DenseNet {
    /// Builds a network from explicit layers, checking that dimensions chain
    /// and the last layer emits logits.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: bias length {} != out dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: in dim {} != previous out dim {}",
                    l.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("layer {i}: non-finite parameter")));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::ShapeMismatch("final layer must be the identity".into()));
        }
        Ok(DenseNet { layers })
    }

    /// He-initialized network: weights `N(0, 2/fan_in)`, biases zero.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 || arch.num_classes == 0 || arch.hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!("degenerate architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![arch.input_dim];
        dims.extend(&arch.hidden);
        dims.push(arch.num_classes);
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut rng));
                DenseLayer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        DenseNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in layer order, weight (row-major) before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    /// Inverse of [`DenseNet::flatten`].
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.dim() == b.weight.dim() && a.activation == b.activation
            })
    }

    fn check_input(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} != network input dim {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits without recording a cache.
    pub fn logits(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let mut h = inputs.to_owned();
        for l in &self.layers {
            h = h.dot(&l.weight.t()) + &l.bias;
            if l.activation == Activation::Relu {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(inputs)?))
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&inputs)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = inputs.to_owned();
        for l in &self.layers {
            let z = h.dot(&l.weight.t()) + &l.bias;
            cache.inputs.push(h);
            h = z.clone();
            if l.activation == Activation::Relu {
                relu_in_place(&mut h);
            }
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    fn check_cache(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Result<()> {
        if cache.inputs.len() != self.layers.len()
            || cache.inputs.iter().zip(&self.layers).any(|(x, l)| x.ncols() != l.in_dim())
        {
            return Err(Error::ShapeMismatch("cache does not match network".into()));
        }
        if grad_logits.dim() != (cache.batch_size(), self.num_classes()) {
            return Err(Error::ShapeMismatch(format!(
                "grad_logits {:?} does not match batch {} x {} classes",
                grad_logits.dim(),
                cache.batch_size(),
                self.num_classes()
            )));
        }
        Ok(())
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad_logits: &Array2<f64>,
        mut param_grads: Option<&mut Gradients>,
    ) -> Array2<f64> {
        let mut g = grad_logits.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                Zip::from(&mut g).and(&cache.pre[i]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            if let Some(grads) = param_grads.as_deref_mut() {
                grads.weights[i] = g.t().dot(&cache.inputs[i]);
                grads.biases[i] = g.sum_axis(Axis(0));
            }
            g = g.dot(&l.weight);
        }
        g
    }

    /// Reverse-mode pass returning parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache, grad_logits)?;
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_impl(cache, grad_logits, Some(&mut grads));
        Ok((grads, input_grad))
    }

    /// Input gradient only; skips the weight-gradient products.
    pub fn input_gradient(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_cache(cache, grad_logits)?;
        Ok(self.backward_impl(cache, grad_logits, None))
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
