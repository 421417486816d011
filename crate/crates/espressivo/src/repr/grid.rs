//! Time/frequency frame grid shared by rolls, labels, and spectrograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of Mel bands. Fixed across the pipeline.
pub const N_MELS: usize = 80;

/// Lowest supported MIDI pitch (A0).
pub const PITCH_MIN: u8 = 21;
/// Highest supported MIDI pitch (C8).
pub const PITCH_MAX: u8 = 108;
/// Number of piano keys, i.e. the width of the rolls.
pub const N_PITCHES: usize = (PITCH_MAX - PITCH_MIN) as usize + 1;

/// Analysis grid tying together the audio front end and the roll
/// rasterization. One roll/spectrogram frame covers `hop_length` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    /// Audio sample rate in Hz.
    pub sample_rate: u32,
    /// Hop between analysis frames, in samples.
    pub hop_length: usize,
    /// STFT window length, in samples.
    pub window_length: usize,
    /// Number of Mel bands (always [`N_MELS`]).
    pub n_mels: usize,
    /// Lower edge of the Mel filterbank in Hz.
    pub mel_fmin: f32,
    /// Upper edge of the Mel filterbank in Hz.
    pub mel_fmax: f32,
}

impl Default for FrameGrid {
    fn default() -> Self {
        FrameGrid {
            sample_rate: 16_000,
            hop_length: 256,
            window_length: 1024,
            n_mels: N_MELS,
            mel_fmin: 30.0,
            mel_fmax: 8_000.0,
        }
    }
}

impl FrameGrid {
    /// Build a grid, checking every invariant.
    pub fn new(
        sample_rate: u32,
        hop_length: usize,
        window_length: usize,
        mel_fmin: f32,
        mel_fmax: f32,
    ) -> Result<Self> {
        let grid = FrameGrid {
            sample_rate,
            hop_length,
            window_length,
            n_mels: N_MELS,
            mel_fmin,
            mel_fmax,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Check all grid invariants, returning the grid's own description of
    /// the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidGrid("sample_rate must be positive".into()));
        }
        if self.hop_length == 0 {
            return Err(Error::InvalidGrid("hop_length must be positive".into()));
        }
        if self.hop_length > self.window_length {
            return Err(Error::InvalidGrid(format!(
                "hop_length ({}) must be <= window_length ({})",
                self.hop_length, self.window_length
            )));
        }
        if self.n_mels != N_MELS {
            return Err(Error::InvalidGrid(format!(
                "n_mels must be {N_MELS}, got {}",
                self.n_mels
            )));
        }
        if !(self.mel_fmin >= 0.0 && self.mel_fmin < self.mel_fmax) {
            return Err(Error::InvalidGrid(format!(
                "mel_fmin ({}) must be in [0, mel_fmax)",
                self.mel_fmin
            )));
        }
        if self.mel_fmax > self.sample_rate as f32 / 2.0 {
            return Err(Error::InvalidGrid(format!(
                "mel_fmax ({}) exceeds Nyquist ({})",
                self.mel_fmax,
                self.sample_rate as f32 / 2.0
            )));
        }
        Ok(())
    }

    /// Analysis frames per second (`sample_rate / hop_length`).
    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop_length as f64
    }

    /// Number of frames covering `duration_s` seconds: `ceil(duration * fps)`.
    pub fn frames_for_duration(&self, duration_s: f64) -> usize {
        (duration_s * self.frames_per_second()).ceil() as usize
    }

    /// Frame index containing time `t` seconds (floor rule).
    pub fn frame_at(&self, t: f64) -> usize {
        (t * self.frames_per_second()).floor() as usize
    }
}
