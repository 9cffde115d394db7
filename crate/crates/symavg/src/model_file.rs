//! Stencil model files: an 8-byte magic, a little-endian `u32` header length,
//! a JSON header, then the parameters as little-endian `f32`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use symavg_core::surrogate::{Normalization, StencilConfig, StencilModel, TrainConfig};
use symavg_core::{Real, Schema};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SYMAVGM\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub dtype: String,
    pub parameter_count: usize,
    pub config: StencilConfig,
    pub schema: Schema,
    pub normalization: Normalization,
    #[serde(default)]
    pub training: Option<TrainConfig>,
}

pub fn save_model(path: &Path, model: &StencilModel<f32>, training: Option<&TrainConfig>) -> Result<()> {
    let header = ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        dtype: f32::DTYPE.into(),
        parameter_count: model.params().len(),
        config: model.config().clone(),
        schema: (**model.schema()).clone(),
        normalization: model.normalization().clone(),
        training: training.cloned(),
    };
    let json = serde_json::to_vec(&header).map_err(Error::json(path))?;
    let mut bytes = Vec::with_capacity(12 + json.len() + 4 * model.params().len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for &p in model.params() {
        p.write_le(&mut bytes);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_header(path: &Path) -> Result<(ModelHeader, Vec<u8>)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a model file (bad magic)"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| Error::format(path, "truncated header"))?;
    // peek at the version before committing to the full header layout
    let version = serde_json::from_slice::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.get("format_version").and_then(|x| x.as_u64()));
    match version {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::Version { path: path.into(), found: v as u32, expected: MODEL_FORMAT_VERSION }),
        None => return Err(Error::format(path, "corrupted header: no readable format version")),
    }
    let header: ModelHeader = serde_json::from_slice(body).map_err(Error::json(path))?;
    Ok((header, bytes[12 + len..].to_vec()))
}

pub fn load_model(path: &Path) -> Result<StencilModel<f32>> {
    let (header, payload) = read_header(path)?;
    if header.dtype != f32::DTYPE {
        return Err(Error::format(path, format!("unsupported parameter dtype {:?}", header.dtype)));
    }
    if payload.len() != header.parameter_count * 4 {
        return Err(Error::format(
            path,
            format!("expected {} parameter bytes, found {}", header.parameter_count * 4, payload.len()),
        ));
    }
    let params = payload.chunks_exact(4).map(f32::read_le).collect();
    StencilModel::from_parts(header.config, Arc::new(header.schema), header.normalization, params)
        .map_err(|e| Error::format(path, e.to_string()))
}
