//! Model container: JSON header followed by a flat little-endian f32
//! parameter blob in declared order, checksummed.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::fnv1a_64;
use crate::error::{Error, Result};
use crate::nn::{build_model, ArchName, Hyper, Model};

const MAGIC: &[u8; 4] = b"LRPM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: ArchName,
    input_dim: usize,
    num_classes: usize,
    hyper: Hyper,
    seed: u64,
    param_count: usize,
    checksum: String,
}

fn blob_from_params(params: &[f64]) -> Vec<u8> {
    let mut blob = Vec::with_capacity(params.len() * 4);
    for &p in params {
        blob.extend_from_slice(&(p as f32).to_le_bytes());
    }
    blob
}

/// Write the model to `path`. Parameters are stored as f32, so the first
/// save of a freshly trained f64 model rounds them; save/load/save is
/// byte-stable.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let params = model.params_to_vec();
    let blob = blob_from_params(&params);
    let header = Header {
        format_version: FORMAT_VERSION,
        arch: model.arch,
        input_dim: model.input_dim,
        num_classes: model.num_classes,
        hyper: model.hyper,
        seed: model.seed,
        param_count: params.len(),
        checksum: format!("{:016x}", fnv1a_64(&blob)),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::ModelFile(format!("header encode: {e}")))?;

    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    file.write_all(&blob)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::ModelFile("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::ModelFile("bad magic; not a model file".into()));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::ModelFile("file too short for header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::ModelFile("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::ModelFile(format!("header decode: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "format version mismatch: file has {}, expected {FORMAT_VERSION}",
            header.format_version
        )));
    }

    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;
    if blob.len() != header.param_count * 4 {
        return Err(Error::ModelFile(format!(
            "parameter blob truncated: expected {} bytes, got {}",
            header.param_count * 4,
            blob.len()
        )));
    }
    let checksum = format!("{:016x}", fnv1a_64(&blob));
    if checksum != header.checksum {
        return Err(Error::ModelFile(format!(
            "checksum failure: header {}, blob {checksum}",
            header.checksum
        )));
    }

    let mut model = build_model(
        header.arch,
        header.input_dim,
        header.num_classes,
        header.hyper,
        header.seed,
    )?;
    if model.param_count() != header.param_count {
        return Err(Error::ModelFile(format!(
            "parameter count mismatch: architecture needs {}, file has {}",
            model.param_count(),
            header.param_count
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    model.params_from_vec(&params)?;
    Ok(model)
}
