//! Versioned JSON serialization for networks (checkpoints).
//!
//! Weights are stored as row-major JSON numbers. `serde_json` prints the
//! shortest decimal that round-trips, so save/load is bit-exact for finite
//! `f64` parameters (and for `f32`, which embeds exactly in `f64`).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationKind, Layer, Network};
use crate::scalar::Scalar;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    version: u32,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    activation: String,
    out_dim: usize,
    in_dim: usize,
    /// Row-major, `out_dim * in_dim` entries.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn to_file<F: Scalar>(network: &Network<F>) -> NetworkFile {
    NetworkFile {
        version: FORMAT_VERSION,
        layers: network
            .layers()
            .iter()
            .map(|l| LayerFile {
                activation: l.activation.name().to_string(),
                out_dim: l.out_dim(),
                in_dim: l.in_dim(),
                weights: l.weights.iter().map(|w| w.as_f64()).collect(),
                bias: l.bias.iter().map(|b| b.as_f64()).collect(),
            })
            .collect(),
    }
}

fn from_file<F: Scalar>(file: NetworkFile) -> Result<Network<F>> {
    if file.version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported network file version {} (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for lf in file.layers {
        if lf.weights.len() != lf.out_dim * lf.in_dim {
            return Err(Error::format(format!(
                "layer payload has {} weights, expected {}",
                lf.weights.len(),
                lf.out_dim * lf.in_dim
            )));
        }
        if lf.bias.len() != lf.out_dim {
            return Err(Error::format("layer bias length does not match out_dim"));
        }
        let weights = Array2::from_shape_vec(
            (lf.out_dim, lf.in_dim),
            lf.weights.into_iter().map(F::from_f64_lossy).collect(),
        )
        .map_err(|e| Error::format(format!("weight shape: {e}")))?;
        let bias = Array1::from_vec(lf.bias.into_iter().map(F::from_f64_lossy).collect());
        layers.push(Layer::new(weights, bias, ActivationKind::from_name(&lf.activation)?)?);
    }
    Network::new(layers)
}

pub fn to_json_string<F: Scalar>(network: &Network<F>) -> Result<String> {
    Ok(serde_json::to_string(&to_file(network))?)
}

pub fn from_json_str<F: Scalar>(json: &str) -> Result<Network<F>> {
    from_file(serde_json::from_str(json)?)
}

pub fn save_network<F: Scalar>(network: &Network<F>, path: impl AsRef<Path>) -> Result<()> {
    let writer = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer(writer, &to_file(network))?;
    Ok(())
}

pub fn load_network<F: Scalar>(path: impl AsRef<Path>) -> Result<Network<F>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    from_file(serde_json::from_reader(reader)?)
}
