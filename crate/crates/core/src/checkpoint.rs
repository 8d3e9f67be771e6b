//! Model checkpoints.
//!
//! Layout: magic `TDNC`, little-endian `u32` version, a length-prefixed
//! UTF-8 JSON header (config plus per-tensor name/rows/cols/offset), then
//! the tensor payloads as little-endian `f64`, row-major, in header order.
//! Offsets are relative to the start of the payload section. Round-trips
//! are byte-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdnError};
use crate::matrix::Matrix;
use crate::model::{TDNConfig, TDNModel};

const MAGIC: &[u8; 4] = b"TDNC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TDNConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &TDNModel, path: &Path) -> Result<()> {
    let mut tensors = Vec::with_capacity(model.store.len());
    let mut offset = 0u64;
    for (_, param) in model.store.iter() {
        tensors.push(TensorEntry {
            name: param.name.clone(),
            rows: param.value.rows(),
            cols: param.value.cols(),
            offset,
        });
        offset += (param.value.data().len() * 8) as u64;
    }
    let header = Header { config: model.config.clone(), tensors };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(12 + header_bytes.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, param) in model.store.iter() {
        for v in param.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TDNModel> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(TdnError::Format(format!(
            "checkpoint too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(TdnError::Format(format!(
            "bad checkpoint magic {:02x?}, expected {MAGIC:02x?}",
            &bytes[0..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(TdnError::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + header_len;
    if bytes.len() < payload_start {
        return Err(TdnError::Format("checkpoint header is truncated".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..payload_start])?;
    let payload = &bytes[payload_start..];

    let mut model = TDNModel::init(&header.config)?;
    let ids = model.param_ids();
    if ids.len() != header.tensors.len() {
        return Err(TdnError::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            header.tensors.len(),
            ids.len()
        )));
    }
    for (id, entry) in ids.into_iter().zip(&header.tensors) {
        let expected = model.store.get(id);
        if expected.name != entry.name {
            return Err(TdnError::Format(format!(
                "tensor name mismatch: checkpoint has {:?}, model expects {:?}",
                entry.name, expected.name
            )));
        }
        if expected.value.shape() != (entry.rows, entry.cols) {
            return Err(TdnError::Format(format!(
                "tensor {:?} is {}x{} in the checkpoint but {}x{} in the model",
                entry.name,
                entry.rows,
                entry.cols,
                expected.value.rows(),
                expected.value.cols()
            )));
        }
        let count = entry.rows * entry.cols;
        let start = entry.offset as usize;
        let end = start + count * 8;
        if end > payload.len() {
            return Err(TdnError::Format(format!(
                "checkpoint payload truncated: tensor {:?} needs bytes [{start}, {end}) \
                 of {}",
                entry.name,
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let off = start + i * 8;
            data.push(f64::from_le_bytes(payload[off..off + 8].try_into().unwrap()));
        }
        model.store.set_value(id, Matrix::new(entry.rows, entry.cols, data)?)?;
    }
    Ok(model)
}
