//! Model files: `model.json` (shape header) and `model.bin` (flat f64 LE
//! parameters in `W_0, b_0, W_1, b_1, ...` order, weights row-major
//! `out x in`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::MlpModel;
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MODEL_HEADER: &str = "model.json";
pub const MODEL_PARAMS: &str = "model.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub widths: Vec<usize>,
    pub activation: String,
    pub dropout: f64,
    pub num_params: usize,
    pub layout: String,
    pub params_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn param_bytes(m: &MlpModel) -> Vec<u8> {
    m.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn model_header(m: &MlpModel) -> ModelHeader {
    ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        widths: m.widths.clone(),
        activation: "elu".into(),
        dropout: m.dropout,
        num_params: m.num_params(),
        layout: "W0, b0, W1, b1, ...; W row-major out x in; f64 little-endian".into(),
        params_sha256: hex::encode(Sha256::digest(param_bytes(m))),
        config_hash: None,
        seed: None,
    }
}

/// Writes `model.json` and `model.bin` into `dir`.
pub fn save_model(m: &MlpModel, dir: impl AsRef<Path>) -> Result<()> {
    write_model(m, dir.as_ref(), model_header(m))
}

/// Like [`save_model`], recording the producing run in the header.
pub fn save_model_tagged(m: &MlpModel, dir: impl AsRef<Path>, config_hash: &str, seed: u64) -> Result<()> {
    let mut h = model_header(m);
    h.config_hash = Some(config_hash.to_string());
    h.seed = Some(seed);
    write_model(m, dir.as_ref(), h)
}

fn write_model(m: &MlpModel, dir: &Path, h: ModelHeader) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(&h)?;
    json.push(b'\n');
    let hp = dir.join(MODEL_HEADER);
    fs::write(&hp, json).map_err(|e| Error::io(&hp, e))?;
    let pp = dir.join(MODEL_PARAMS);
    fs::write(&pp, param_bytes(m)).map_err(|e| Error::io(&pp, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<MlpModel> {
    let dir = dir.as_ref();
    let hp = dir.join(MODEL_HEADER);
    let text = fs::read(&hp).map_err(|e| Error::io(&hp, e))?;
    let h: ModelHeader =
        serde_json::from_slice(&text).map_err(|e| Error::format(&hp, format!("invalid model header: {e}")))?;
    if h.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::format(&hp, format!("format version mismatch: {}", h.format_version)));
    }
    let mut m = MlpModel::new(&h.widths, h.dropout, 0)?;
    let pp = dir.join(MODEL_PARAMS);
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    if bytes.len() != 8 * m.num_params() || h.num_params != m.num_params() {
        return Err(Error::format(
            &pp,
            format!("dimension mismatch: {} bytes for {} parameters", bytes.len(), m.num_params()),
        ));
    }
    if hex::encode(Sha256::digest(&bytes)) != h.params_sha256 {
        return Err(Error::format(&pp, "content hash mismatch"));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    m.set_flat(&flat)?;
    Ok(m)
}
