//! File formats: piece archives, WAV audio, manifests, and atomic writes.
//! (SMF reading/writing lives in [`crate::repr::midi`].)

pub mod archive;
pub mod manifest;
pub mod wav;

pub use archive::{
    build_piece_tensors, grid_sidecar_path, load_piece_archive, save_latents,
    save_piece_archive, PieceTensors,
};
pub use manifest::{
    read_data_manifest, read_input_manifest, write_data_manifest, DataRow, InputRow, RunManifest,
};
pub use wav::{read_wav_mono, write_wav_mono};

use std::path::Path;

use crate::error::Result;

/// Write `bytes` to `path` via a temporary file in the same directory plus
/// an atomic rename, so readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
