//! Versioned checkpoint container.
//!
//! One file holds every named parameter array, the Adam moments, the train
//! config, and the step counter. Layout:
//!
//! ```text
//! magic  "ESPRSSV1"          8 bytes
//! header length              u64 little-endian
//! header                     JSON (step, config, array table)
//! data                       raw little-endian f32
//! ```
//!
//! All randomness in a run is derived from `(config.seed, step)` streams, so
//! seed + step in the header *is* the complete RNG state; nothing else is
//! needed for exact resume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::model::GmVae;
use crate::networks::ParamShape;
use crate::trainer::{Adam, TrainConfig, TrainState};

const MAGIC: &[u8; 8] = b"ESPRSSV1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Element offset into the data section.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    adam_t: u64,
    config: TrainConfig,
    arrays: Vec<ArrayMeta>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serialize a training state to `path` (atomic write).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let model = &state.model;
    let n = model.num_params();
    let mut arrays = Vec::new();
    for entry in model.layout.entries() {
        arrays.push(ArrayMeta {
            name: entry.name.clone(),
            shape: match entry.shape {
                ParamShape::Matrix(r, c) => vec![r, c],
                ParamShape::Vector(l) => vec![l],
            },
            dtype: "f32".into(),
            offset: entry.offset,
            len: entry.shape.len(),
        });
    }
    arrays.push(ArrayMeta {
        name: "optim.m".into(),
        shape: vec![n],
        dtype: "f32".into(),
        offset: n,
        len: n,
    });
    arrays.push(ArrayMeta {
        name: "optim.v".into(),
        shape: vec![n],
        dtype: "f32".into(),
        offset: 2 * n,
        len: n,
    });

    let header = Header {
        format_version: FORMAT_VERSION,
        step: state.step,
        adam_t: state.opt.t,
        config: state.config.clone(),
        arrays,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(8 + 8 + header_bytes.len() + 12 * n);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for chunk in [&model.params, &state.opt.m, &state.opt.v] {
        for v in chunk.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

/// Deserialize a training state. The model is rebuilt from the stored
/// config and its layout cross-checked against the array table, so a file
/// from a structurally different model is rejected rather than misloaded.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(corrupt(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(corrupt(format!(
            "{}: truncated header ({} of {header_len} bytes)",
            path.display(),
            bytes.len().saturating_sub(16)
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| corrupt(format!("{}: header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "{}: format version {} unsupported (expected {FORMAT_VERSION})",
            path.display(),
            header.format_version
        )));
    }
    header.config.validate()?;

    let mut model = GmVae::<f32>::new(header.config.model_config(), header.config.seed)?;
    let n = model.num_params();

    // array table must match the rebuilt layout exactly
    if header.arrays.len() != model.layout.entries().len() + 2 {
        return Err(corrupt(format!(
            "{}: {} arrays, expected {}",
            path.display(),
            header.arrays.len(),
            model.layout.entries().len() + 2
        )));
    }
    for (entry, meta) in model.layout.entries().iter().zip(&header.arrays) {
        let expect_shape = match entry.shape {
            ParamShape::Matrix(r, c) => vec![r, c],
            ParamShape::Vector(l) => vec![l],
        };
        if entry.name != meta.name
            || expect_shape != meta.shape
            || entry.offset != meta.offset
            || meta.dtype != "f32"
        {
            return Err(corrupt(format!(
                "{}: array `{}` does not match model structure",
                path.display(),
                meta.name
            )));
        }
    }

    let data = &bytes[16 + header_len..];
    if data.len() != 12 * n {
        return Err(corrupt(format!(
            "{}: data section holds {} bytes, expected {}",
            path.display(),
            data.len(),
            12 * n
        )));
    }
    let read_f32s = |elems: std::ops::Range<usize>| -> Vec<f32> {
        data[elems.start * 4..elems.end * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    model.params = read_f32s(0..n);
    let mut opt = Adam::new(n);
    opt.m = read_f32s(n..2 * n);
    opt.v = read_f32s(2 * n..3 * n);
    opt.t = header.adam_t;

    Ok(TrainState {
        model,
        opt,
        step: header.step,
        config: header.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_state() -> TrainState {
        let config = TrainConfig {
            latent_dim: 2,
            hidden_size: 4,
            max_steps: 10,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(&config).unwrap();
        for (i, v) in state.opt.m.iter_mut().enumerate() {
            *v = i as f32 * 0.001;
        }
        state.opt.t = 3;
        state.step = 3;
        state
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ckpt");
        let state = tiny_state();
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, state.step);
        assert_eq!(loaded.config, state.config);
        assert_eq!(loaded.model.params, state.model.params);
        assert_eq!(loaded.opt, state.opt);
    }

    #[test]
    fn truncated_and_garbled_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ckpt");
        let state = tiny_state();
        save_checkpoint(&state, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 13]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ckpt");
        save_checkpoint(&tiny_state(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // bump "format_version":1 in the JSON header
        let pos = bytes
            .windows(16)
            .position(|w| w == b"format_version\":")
            .unwrap();
        bytes[pos + 16] = b'9';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
