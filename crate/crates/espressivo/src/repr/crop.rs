//! Aligned cropping of spectrogram, rolls, and condition labels.

use ndarray::s;

use crate::error::{Error, Result};
use crate::repr::grid::FrameGrid;
use crate::repr::mel::MelSpectrogram;
use crate::repr::roll::{ConditionSequence, FrameRoll, OnsetRoll};

/// A window of `window_frames` frames cut from all five aligned tensors.
#[derive(Debug, Clone)]
pub struct AlignedCrop {
    pub mel: MelSpectrogram,
    pub onset: OnsetRoll,
    pub frame: FrameRoll,
    pub conditions: ConditionSequence,
    pub start_frame: usize,
}

/// Number of frames in a crop window of `window_s` seconds.
pub fn crop_window_frames(window_s: f64, grid: &FrameGrid) -> usize {
    (window_s * grid.frames_per_second()).round() as usize
}

/// Cut the same `[start_frame, start_frame + window_frames)` range out of
/// the spectrogram, both rolls, and both condition sequences.
pub fn crop_pair(
    mel: &MelSpectrogram,
    onset: &OnsetRoll,
    frame: &FrameRoll,
    conditions: &ConditionSequence,
    start_frame: usize,
    window_s: f64,
    grid: &FrameGrid,
) -> Result<AlignedCrop> {
    let t = mel.num_frames();
    if onset.num_frames() != t || frame.num_frames() != t || conditions.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "inputs disagree on frame count: mel {t}, onset {}, frame {}, conditions {}",
            onset.num_frames(),
            frame.num_frames(),
            conditions.len()
        )));
    }
    let window_frames = crop_window_frames(window_s, grid);
    if window_frames == 0 {
        return Err(Error::Crop("crop window rounds to zero frames".into()));
    }
    let end = start_frame + window_frames;
    if end > t {
        return Err(Error::Crop(format!(
            "piece has {t} frames but crop needs [{start_frame}, {end}); \
             pad the piece or skip it"
        )));
    }
    let range = s![start_frame..end, ..];
    Ok(AlignedCrop {
        mel: MelSpectrogram {
            data: mel.data.slice(range).to_owned(),
        },
        onset: OnsetRoll {
            data: onset.data.slice(range).to_owned(),
        },
        frame: FrameRoll {
            data: frame.data.slice(range).to_owned(),
        },
        conditions: ConditionSequence {
            c_art: conditions.c_art.slice(s![start_frame..end]).to_owned(),
            c_dyn: conditions.c_dyn.slice(s![start_frame..end]).to_owned(),
        },
        start_frame,
    })
}
