//! Log-Mel spectrogram front end: Hann STFT, triangular Mel filterbank
//! (Slaney scale and normalization, matching librosa's defaults), log floor.

use ndarray::{Array1, Array2};
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::repr::grid::FrameGrid;

/// Floor applied to Mel magnitudes before the log, so silence maps to
/// `ln(1e-5)` instead of negative infinity.
pub const MEL_MAG_FLOOR: f32 = 1e-5;

/// The log-floor constant: value of a fully silent Mel cell.
pub fn mel_log_floor() -> f32 {
    MEL_MAG_FLOOR.ln()
}

/// Real T x 80 matrix of log-Mel magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f32>,
}

impl MelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_bands(&self) -> usize {
        self.data.ncols()
    }
}

/// Slaney-style Hz -> Mel (linear below 1 kHz, log above).
pub fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

/// Slaney-style Mel -> Hz, inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// Center frequencies (Hz) of the `n_mels + 2` Mel breakpoints for `grid`.
pub fn mel_breakpoints(grid: &FrameGrid) -> Vec<f64> {
    let lo = hz_to_mel(grid.mel_fmin as f64);
    let hi = hz_to_mel(grid.mel_fmax as f64);
    let n = grid.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Triangular Mel filterbank, shape `n_mels x (window/2 + 1)`, with Slaney
/// area normalization (each triangle integrates to ~2 / bandwidth).
pub fn mel_filterbank_f64(grid: &FrameGrid) -> Array2<f64> {
    let n_bins = grid.window_length / 2 + 1;
    let breaks = mel_breakpoints(grid);
    let mut w = Array2::<f64>::zeros((grid.n_mels, n_bins));
    let bin_hz = grid.sample_rate as f64 / grid.window_length as f64;
    for b in 0..grid.n_mels {
        let (f_lo, f_c, f_hi) = (breaks[b], breaks[b + 1], breaks[b + 2]);
        let enorm = 2.0 / (f_hi - f_lo);
        for i in 0..n_bins {
            let f = i as f64 * bin_hz;
            let lower = (f - f_lo) / (f_c - f_lo);
            let upper = (f_hi - f) / (f_hi - f_c);
            let tri = lower.min(upper).max(0.0);
            w[(b, i)] = tri * enorm;
        }
    }
    w
}

/// [`mel_filterbank_f64`] cast to `f32` for the analysis path.
pub fn mel_filterbank(grid: &FrameGrid) -> Array2<f32> {
    mel_filterbank_f64(grid).mapv(|v| v as f32)
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Array1<f32> {
    Array1::from_iter(
        (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .map(|v| v as f32),
    )
}

/// Number of analysis frames for `len` samples: `ceil(len / hop)`, the same
/// count the rolls use for the equivalent duration.
pub fn stft_num_frames(len: usize, grid: &FrameGrid) -> usize {
    len.div_ceil(grid.hop_length)
}

/// Magnitude STFT, `T x (window/2 + 1)`.
///
/// The signal is zero-padded symmetrically so that exactly
/// `T = ceil(len / hop)` frames come out and frame `t` is centered on the
/// same span the rolls assign to frame `t`.
pub fn stft_magnitude(samples: &[f32], grid: &FrameGrid) -> Array2<f32> {
    let window = grid.window_length;
    let hop = grid.hop_length;
    let t_frames = stft_num_frames(samples.len(), grid);
    let n_bins = window / 2 + 1;
    let mut out = Array2::<f32>::zeros((t_frames, n_bins));
    if t_frames == 0 {
        return out;
    }

    let total = (t_frames - 1) * hop + window;
    let pad = total - samples.len();
    let left = pad / 2;

    let win = hann_window(window);
    let mut planner = RealFftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(window);
    let mut buf = vec![0.0f32; window];
    let mut spectrum = fft.make_output_vec();

    for t in 0..t_frames {
        for (i, slot) in buf.iter_mut().enumerate() {
            let src = (t * hop + i) as isize - left as isize;
            *slot = if src >= 0 && (src as usize) < samples.len() {
                samples[src as usize] * win[i]
            } else {
                0.0
            };
        }
        fft.process(&mut buf, &mut spectrum).expect("fft sizes match");
        for (i, c) in spectrum.iter().enumerate() {
            out[(t, i)] = c.norm();
        }
    }
    out
}

/// Log-Mel spectrogram of mono audio sampled at `source_rate`.
///
/// Errors if the audio is empty or `source_rate` differs from the grid's
/// rate; this function never resamples.
pub fn mel_spectrogram(
    samples: &[f32],
    source_rate: u32,
    grid: &FrameGrid,
) -> Result<MelSpectrogram> {
    if samples.is_empty() {
        return Err(Error::Audio("empty audio input".into()));
    }
    if source_rate != grid.sample_rate {
        return Err(Error::Audio(format!(
            "sample rate {source_rate} Hz does not match grid rate {} Hz; resample externally",
            grid.sample_rate
        )));
    }
    let mag = stft_magnitude(samples, grid);
    let fb = mel_filterbank(grid);
    // (T x bins) . (bins x mels)
    let mel = mag.dot(&fb.t());
    let data = mel.mapv(|v| v.max(MEL_MAG_FLOOR).ln());
    Ok(MelSpectrogram { data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FrameGrid {
        FrameGrid::default()
    }

    #[test]
    fn silence_maps_to_log_floor_everywhere() {
        let g = grid();
        let samples = vec![0.0f32; 16_000];
        let mel = mel_spectrogram(&samples, 16_000, &g).unwrap();
        assert_eq!(mel.num_frames(), 16_000usize.div_ceil(256));
        assert_eq!(mel.num_bands(), 80);
        let floor = mel_log_floor();
        assert!(mel.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn empty_and_mismatched_rate_are_rejected() {
        let g = grid();
        assert!(mel_spectrogram(&[], 16_000, &g).is_err());
        assert!(mel_spectrogram(&[0.0; 64], 44_100, &g).is_err());
    }

    #[test]
    fn deterministic_output() {
        let g = grid();
        let samples: Vec<f32> = (0..8000)
            .map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16_000.0).sin())
            .collect();
        let a = mel_spectrogram(&samples, 16_000, &g).unwrap();
        let b = mel_spectrogram(&samples, 16_000, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sine_at_band_center_peaks_in_that_band() {
        let g = grid();
        // recompute band centers from first principles (Slaney formulas)
        let f_sp = 200.0 / 3.0;
        let logstep = (6.4f64).ln() / 27.0;
        let to_mel = |hz: f64| {
            if hz >= 1000.0 {
                15.0 + (hz / 1000.0).ln() / logstep
            } else {
                hz / f_sp
            }
        };
        let to_hz = |mel: f64| {
            if mel >= 15.0 {
                1000.0 * (logstep * (mel - 15.0)).exp()
            } else {
                f_sp * mel
            }
        };
        let lo = to_mel(30.0);
        let hi = to_mel(8000.0);
        for band in [10usize, 30, 50, 70] {
            let center = to_hz(lo + (hi - lo) * (band + 1) as f64 / 81.0);
            let samples: Vec<f32> = (0..16_000)
                .map(|i| {
                    (2.0 * std::f64::consts::PI * center * i as f64 / 16_000.0).sin() as f32
                })
                .collect();
            let mel = mel_spectrogram(&samples, 16_000, &g).unwrap();
            // interior frames only: edge frames see the zero padding
            let t = mel.num_frames() / 2;
            let row = mel.data.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, band, "band {band} center {center:.1} Hz");
        }
    }

    #[test]
    fn frame_count_matches_roll_convention() {
        let g = grid();
        for len in [1usize, 255, 256, 257, 10_000, 16_000] {
            let samples = vec![0.0f32; len];
            let mel = mel_spectrogram(&samples, 16_000, &g).unwrap();
            assert_eq!(mel.num_frames(), len.div_ceil(256), "len {len}");
        }
    }

    #[test]
    fn filterbank_rows_are_nonnegative_and_peaked() {
        let fb = mel_filterbank(&grid());
        assert_eq!(fb.nrows(), 80);
        for row in fb.rows() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.iter().any(|&v| v > 0.0), "every band covers some bin");
        }
    }
}
