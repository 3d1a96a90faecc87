//! Checkpoints as a flat little-endian `f64` stream plus a JSON sidecar.
//!
//! `<stem>.bin` holds every parameter in layer order, each layer's weight
//! matrix (row-major, `out × in`) followed by its bias. `<stem>.json` records
//! the layer shapes and activations needed to rebuild the network.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, DenseNet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointLayout {
    pub format: String,
    pub num_params: usize,
    pub layers: Vec<LayerLayout>,
}

const FORMAT: &str = "f64-le; per layer: weight row-major (out x in), then bias";

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_checkpoint(net: &DenseNet, stem: &Path) -> Result<()> {
    let layout = CheckpointLayout {
        format: FORMAT.to_string(),
        num_params: net.num_params(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerLayout {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation,
            })
            .collect(),
    };
    let bytes: Vec<u8> = net.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    let bin = with_ext(stem, "bin");
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let json = with_ext(stem, "json");
    fs::write(&json, serde_json::to_string_pretty(&layout)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<DenseNet> {
    let json = with_ext(stem, "json");
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let layout: CheckpointLayout = serde_json::from_str(&text)?;
    let bin = with_ext(stem, "bin");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != layout.num_params * 8 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, layout expects {} parameters",
            bin.display(),
            bytes.len(),
            layout.num_params
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let layers = layout
        .layers
        .iter()
        .map(|l| DenseLayer {
            weight: Array2::zeros((l.out_dim, l.in_dim)),
            bias: Array1::zeros(l.out_dim),
            activation: l.activation,
        })
        .collect();
    let mut net = DenseNet::from_layers(layers)?;
    net.assign_flat(&values)?;
    Ok(net)
}
