//! `SNNM` model checkpoints.
//!
//! ```text
//! "SNNM" | version: u16 LE | header_len: u32 LE | header: JSON ModelSpec (UTF-8)
//!        | weights of layer 0 | weights of layer 1 | ...
//! ```
//!
//! Weights are little-endian `f32`, row-major in the layer's documented
//! layout; their counts follow from the header.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::scalar::Scalar;

pub const SNNM_MAGIC: &[u8; 4] = b"SNNM";
pub const SNNM_VERSION: u16 = 1;

pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.spec)?;
    let mut out = Vec::with_capacity(10 + header.len() + 4 * model.parameter_count());
    out.extend_from_slice(SNNM_MAGIC);
    out.extend_from_slice(&SNNM_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for w in model.weights.iter().flatten() {
        out.extend_from_slice(&w.to_f32_lossy().to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < 10 || &bytes[..4] != SNNM_MAGIC {
        return Err(Error::format(0, "missing SNNM magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SNNM_VERSION {
        return Err(Error::format(4, format!("unsupported SNNM version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header_end = 10 + header_len;
    if bytes.len() < header_end {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    let spec: ModelSpec = serde_json::from_slice(&bytes[10..header_end])
        .map_err(|e| Error::format(10, format!("bad header: {e}")))?;
    spec.validate().map_err(|e| Error::format(10, e.to_string()))?;

    let mut pos = header_end;
    let mut weights = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let n = layer.weight_count();
        let end = pos + 4 * n;
        if bytes.len() < end {
            return Err(Error::format(bytes.len(), format!("truncated weights: need {end} bytes")));
        }
        weights.push(
            bytes[pos..end]
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
        );
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::format(pos, "trailing bytes after weights"));
    }
    Model::new(spec, weights).map_err(|e| Error::format(header_end, e.to_string()))
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| e.in_file(path))
}
