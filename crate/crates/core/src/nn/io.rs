//! Model checkpoints: a JSON shape manifest on the first line followed by
//! the raw little-endian f64 parameter values in declaration order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::RNModel;
use super::{ModelConfig, NnError};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    variant: String,
    cfg: ModelConfig,
    tensors: Vec<(String, Vec<usize>)>,
}

const VERSION: u32 = 1;

pub fn save_checkpoint(model: &RNModel, variant: &str, path: &Path) -> Result<(), NnError> {
    let header = Header {
        version: VERSION,
        variant: variant.to_string(),
        cfg: model.cfg.clone(),
        tensors: model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(n, t)| (n, t.shape.clone()))
            .collect(),
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
    w.write_all(b"\n")?;
    for t in model.params() {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RNModel, String), NnError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NnError::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
    if header.version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let mut model = RNModel::init(&header.cfg, 0);
    let expected: Vec<(String, Vec<usize>)> = model
        .param_names()
        .into_iter()
        .zip(model.params())
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    if expected != header.tensors {
        return Err(NnError::Checkpoint("tensor manifest mismatch".into()));
    }
    let mut data = &bytes[nl + 1..];
    for t in model.params_mut() {
        let need = t.data.len() * 8;
        if data.len() < need {
            return Err(NnError::Checkpoint("truncated parameter data".into()));
        }
        for v in t.data.iter_mut() {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&data[..8]);
            *v = f64::from_le_bytes(buf);
            data = &data[8..];
        }
    }
    if !data.is_empty() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok((model, header.variant))
}
