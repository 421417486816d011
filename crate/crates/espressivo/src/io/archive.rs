//! Per-piece named-array archives.
//!
//! Each prepared piece is one `.npz` file with keys `mel` (T x 80 f32),
//! `onset` (T x 88 u8), `frame` (T x 88 u8), `c_art` (T u8), `c_dyn` (T u8),
//! plus a JSON sidecar `<stem>.grid.json` recording the [`FrameGrid`].

use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use ndarray_npy::{NpzReader, NpzWriter};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::repr::{ConditionSequence, FrameGrid, FrameRoll, MelSpectrogram, OnsetRoll};

/// The five aligned tensors of one prepared piece.
#[derive(Debug, Clone)]
pub struct PieceTensors {
    pub mel: MelSpectrogram,
    pub onset: OnsetRoll,
    pub frame: FrameRoll,
    pub conditions: ConditionSequence,
}

impl PieceTensors {
    pub fn num_frames(&self) -> usize {
        self.mel.num_frames()
    }

    /// Check that all five tensors agree on the frame count.
    pub fn validate(&self) -> Result<()> {
        let t = self.mel.num_frames();
        if self.onset.num_frames() != t
            || self.frame.num_frames() != t
            || self.conditions.c_art.len() != t
            || self.conditions.c_dyn.len() != t
        {
            return Err(Error::ShapeMismatch(format!(
                "piece tensors disagree on frame count: mel {t}, onset {}, frame {}, c_art {}, c_dyn {}",
                self.onset.num_frames(),
                self.frame.num_frames(),
                self.conditions.c_art.len(),
                self.conditions.c_dyn.len()
            )));
        }
        Ok(())
    }
}

/// Sidecar path for an archive: `piece.npz` -> `piece.grid.json`.
pub fn grid_sidecar_path(archive: &Path) -> PathBuf {
    archive.with_extension("grid.json")
}

/// Build the five aligned tensors for one piece from its note events and
/// audio. The frame count is pinned to the spectrogram's
/// `ceil(samples / hop)` so float rounding of the duration can never leave
/// the rolls one frame off; events must fit inside the audio.
pub fn build_piece_tensors(
    events: &[crate::repr::NoteEvent],
    audio: &[f32],
    grid: &FrameGrid,
) -> Result<PieceTensors> {
    use crate::repr::{label_conditions, mel_spectrogram, rasterize};
    let mel = mel_spectrogram(audio, grid.sample_rate, grid)?;
    let t = mel.num_frames();
    let duration_s = audio.len() as f64 / grid.sample_rate as f64;
    let (mut onset, mut frame) = rasterize(events, grid, duration_s)?;
    for roll in [&mut onset.data, &mut frame.data] {
        if roll.nrows() != t {
            let mut resized = ndarray::Array2::<u8>::zeros((t, roll.ncols()));
            let copy = roll.nrows().min(t);
            resized
                .slice_mut(ndarray::s![..copy, ..])
                .assign(&roll.slice(ndarray::s![..copy, ..]));
            *roll = resized;
        }
    }
    let conditions = label_conditions(events, &frame, grid);
    let piece = PieceTensors {
        mel,
        onset,
        frame,
        conditions,
    };
    piece.validate()?;
    Ok(piece)
}

/// Write a piece archive and its grid sidecar.
pub fn save_piece_archive(path: &Path, piece: &PieceTensors, grid: &FrameGrid) -> Result<()> {
    piece.validate()?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut npz = NpzWriter::new(File::create(path)?);
    npz.add_array("mel", &piece.mel.data)?;
    npz.add_array("onset", &piece.onset.data)?;
    npz.add_array("frame", &piece.frame.data)?;
    npz.add_array("c_art", &piece.conditions.c_art)?;
    npz.add_array("c_dyn", &piece.conditions.c_dyn)?;
    npz.finish().map_err(|e| Error::Npz(e.to_string()))?;

    let sidecar = serde_json::to_vec_pretty(grid)?;
    atomic_write(&grid_sidecar_path(path), &sidecar)?;
    Ok(())
}

fn archive_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Archive {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Read a piece archive and its grid sidecar back.
pub fn load_piece_archive(path: &Path) -> Result<(PieceTensors, FrameGrid)> {
    let file = File::open(path).map_err(|e| archive_err(path, e.to_string()))?;
    let mut npz = NpzReader::new(file).map_err(|e| archive_err(path, e.to_string()))?;
    let mel: Array2<f32> = npz
        .by_name("mel")
        .map_err(|e| archive_err(path, format!("key `mel`: {e}")))?;
    let onset: Array2<u8> = npz
        .by_name("onset")
        .map_err(|e| archive_err(path, format!("key `onset`: {e}")))?;
    let frame: Array2<u8> = npz
        .by_name("frame")
        .map_err(|e| archive_err(path, format!("key `frame`: {e}")))?;
    let c_art: Array1<u8> = npz
        .by_name("c_art")
        .map_err(|e| archive_err(path, format!("key `c_art`: {e}")))?;
    let c_dyn: Array1<u8> = npz
        .by_name("c_dyn")
        .map_err(|e| archive_err(path, format!("key `c_dyn`: {e}")))?;

    let piece = PieceTensors {
        mel: MelSpectrogram { data: mel },
        onset: OnsetRoll { data: onset },
        frame: FrameRoll { data: frame },
        conditions: ConditionSequence { c_art, c_dyn },
    };
    piece
        .validate()
        .map_err(|e| archive_err(path, e.to_string()))?;
    if piece.mel.num_bands() != 80 {
        return Err(archive_err(
            path,
            format!("mel has {} bands, expected 80", piece.mel.num_bands()),
        ));
    }

    let sidecar = grid_sidecar_path(path);
    let grid_bytes = std::fs::read(&sidecar)
        .map_err(|e| archive_err(&sidecar, format!("grid sidecar missing: {e}")))?;
    let grid: FrameGrid = serde_json::from_slice(&grid_bytes)?;
    grid.validate()?;
    Ok((piece, grid))
}

/// Export latent trajectories for inspection: keys `z_art`, `z_dyn`
/// (both T x D f32).
pub fn save_latents(path: &Path, z_art: &Array2<f32>, z_dyn: &Array2<f32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut npz = NpzWriter::new(File::create(path)?);
    npz.add_array("z_art", z_art)?;
    npz.add_array("z_dyn", z_dyn)?;
    npz.finish().map_err(|e| Error::Npz(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn piece(t: usize) -> PieceTensors {
        PieceTensors {
            mel: MelSpectrogram {
                data: Array2::from_shape_fn((t, 80), |(i, j)| (i + j) as f32 * 0.5),
            },
            onset: OnsetRoll {
                data: Array2::from_elem((t, 88), 0),
            },
            frame: FrameRoll {
                data: Array2::from_elem((t, 88), 1),
            },
            conditions: ConditionSequence {
                c_art: Array1::from_elem(t, 1),
                c_dyn: Array1::from_elem(t, 0),
            },
        }
    }

    #[test]
    fn round_trip_preserves_tensors_and_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("piece_000.npz");
        let grid = FrameGrid::default();
        let original = piece(37);
        save_piece_archive(&path, &original, &grid).unwrap();
        let (loaded, loaded_grid) = load_piece_archive(&path).unwrap();
        assert_eq!(loaded.mel.data, original.mel.data);
        assert_eq!(loaded.onset.data, original.onset.data);
        assert_eq!(loaded.frame.data, original.frame.data);
        assert_eq!(loaded.conditions, original.conditions);
        assert_eq!(loaded_grid, grid);
    }

    #[test]
    fn missing_key_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.npz");
        let mut npz = NpzWriter::new(File::create(&path).unwrap());
        npz.add_array("mel", &Array2::<f32>::zeros((4, 80))).unwrap();
        npz.finish().unwrap();
        let err = load_piece_archive(&path).unwrap_err();
        assert!(err.to_string().contains("onset"));
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("piece.npz");
        let grid = FrameGrid::default();
        let mut bad = piece(10);
        bad.conditions.c_dyn = Array1::from_elem(9, 0);
        assert!(save_piece_archive(&path, &bad, &grid).is_err());
    }
}
