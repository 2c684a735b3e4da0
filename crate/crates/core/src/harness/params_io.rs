//! JSON params file: every tensor by name, shape and row-major data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, HintParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const FORMAT: &str = "hint-params-v1";

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn params_to_json(params: &HintParams<Tensor>) -> String {
    let file = ParamsFile {
        format: FORMAT.to_string(),
        tensors: params
            .named()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("params serialize")
}

/// Parses a params file and checks every name and shape against `cfg`.
pub fn params_from_json(text: &str, cfg: &EncoderConfig) -> Result<HintParams<Tensor>> {
    let file: ParamsFile = serde_json::from_str(text).map_err(|e| Error::Params(e.to_string()))?;
    if file.format != FORMAT {
        return Err(Error::Params(format!(
            "unsupported format {:?}, expected {FORMAT:?}",
            file.format
        )));
    }
    let mut params = HintParams::init(
        &EncoderConfig {
            init_std: 0.0,
            ..cfg.clone()
        },
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
    );
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    if file.tensors.len() != names.len() {
        return Err(Error::Params(format!(
            "expected {} tensors, found {}",
            names.len(),
            file.tensors.len()
        )));
    }
    for ((slot, name), entry) in params
        .tensors_mut()
        .into_iter()
        .zip(&names)
        .zip(file.tensors)
    {
        if &entry.name != name {
            return Err(Error::Params(format!(
                "expected tensor {name:?}, found {:?}",
                entry.name
            )));
        }
        if entry.shape != slot.shape() {
            return Err(Error::Params(format!(
                "{name} has shape {:?}, expected {:?}",
                entry.shape,
                slot.shape()
            )));
        }
        let t = Tensor::new(entry.shape, entry.data).map_err(|e| Error::Params(e.to_string()))?;
        if !t.is_finite() {
            return Err(Error::Params(format!("{name} has non-finite entries")));
        }
        *slot = t;
    }
    Ok(params)
}

pub fn save_params(params: &HintParams<Tensor>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, params_to_json(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>, cfg: &EncoderConfig) -> Result<HintParams<Tensor>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    params_from_json(&text, cfg)
}
