//! Mel-to-audio inversion: regularized filterbank pseudo-inverse followed
//! by Griffin-Lim-style alternating projection.
//!
//! This replaces a trained neural vocoder behind the same interface: log-Mel
//! in, waveform out. Classic (momentum-free) Griffin-Lim is used, whose
//! projection distance is non-increasing per iteration.

use ndarray::Array2;
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::repr::mel::{hann_window, mel_filterbank_f64, stft_magnitude, MelSpectrogram};
use crate::repr::FrameGrid;

/// Solve `A x = b` for symmetric positive-definite `A` via Cholesky,
/// overwriting nothing; `b` holds multiple right-hand sides as columns.
fn solve_spd(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                l[(i, j)] = sum.max(1e-300).sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    let mut x = b.clone();
    let cols = b.ncols();
    // forward then back substitution, per column
    for c in 0..cols {
        for i in 0..n {
            let mut v = x[(i, c)];
            for k in 0..i {
                v -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = v / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = x[(i, c)];
            for k in i + 1..n {
                v -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = v / l[(i, i)];
        }
    }
    x
}

/// Ridge-regularized pseudo-inverse estimate of the linear magnitude
/// spectrogram (`T x bins`) from Mel magnitudes (`T x 80`), clamped to be
/// nonnegative.
pub fn mel_to_linear(mel_magnitudes: &Array2<f64>, grid: &FrameGrid) -> Array2<f64> {
    let w = mel_filterbank_f64(grid); // 80 x bins
    let wwt = w.dot(&w.t()); // 80 x 80
    let ridge = 1e-8 * wwt.diag().sum() / wwt.nrows() as f64;
    let mut a = wwt;
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    // K = (W W^T + ridge I)^{-1} W, so S = M K is the least-norm fit per frame
    let k = solve_spd(&a, &w);
    let mut linear = mel_magnitudes.dot(&k);
    linear.mapv_inplace(|v| v.max(0.0));
    linear
}

/// Weighted overlap-add inverse STFT of `spectrum` (`T x bins` complex),
/// returning `(T-1) * hop + window` samples.
fn istft(spectrum: &Array2<Complex<f32>>, grid: &FrameGrid) -> Vec<f32> {
    let window = grid.window_length;
    let hop = grid.hop_length;
    let t_frames = spectrum.nrows();
    let win = hann_window(window);

    let mut planner = RealFftPlanner::<f32>::new();
    let ifft = planner.plan_fft_inverse(window);
    let mut spec_buf = ifft.make_input_vec();
    let mut frame = vec![0.0f32; window];

    let out_len = (t_frames.max(1) - 1) * hop + window;
    let mut out = vec![0.0f32; out_len];
    let mut norm = vec![0.0f32; out_len];
    let scale = 1.0 / window as f32;

    for t in 0..t_frames {
        for (i, v) in spectrum.row(t).iter().enumerate() {
            spec_buf[i] = *v;
        }
        ifft.process(&mut spec_buf, &mut frame).expect("fft sizes");
        for i in 0..window {
            out[t * hop + i] += frame[i] * scale * win[i];
            norm[t * hop + i] += win[i] * win[i];
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        *o /= n.max(1e-8);
    }
    out
}

fn stft_complex(samples: &[f32], grid: &FrameGrid, t_frames: usize) -> Array2<Complex<f32>> {
    let window = grid.window_length;
    let hop = grid.hop_length;
    let n_bins = window / 2 + 1;
    let win = hann_window(window);
    let mut planner = RealFftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(window);
    let mut buf = vec![0.0f32; window];
    let mut spec = fft.make_output_vec();
    let mut out = Array2::zeros((t_frames, n_bins));
    for t in 0..t_frames {
        for i in 0..window {
            let src = t * hop + i;
            buf[i] = if src < samples.len() {
                samples[src] * win[i]
            } else {
                0.0
            };
        }
        fft.process(&mut buf, &mut spec).expect("fft sizes");
        for (i, c) in spec.iter().enumerate() {
            out[(t, i)] = *c;
        }
    }
    out
}

/// Relative Frobenius distance between the magnitudes of `spectrum` and the
/// target magnitudes. This is the quantity Griffin-Lim drives down.
pub fn spectral_convergence(spectrum: &Array2<Complex<f32>>, target: &Array2<f64>) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (c, &m) in spectrum.iter().zip(target.iter()) {
        let d = c.norm() as f64 - m;
        num += d * d;
        den += m * m;
    }
    (num / den.max(1e-300)).sqrt()
}

/// Griffin-Lim core: returns the untrimmed overlap-add waveform and its
/// spectral-convergence error against the magnitude target.
fn griffin_lim(
    target: &Array2<f64>,
    grid: &FrameGrid,
    n_iterations: usize,
) -> (Vec<f32>, f64) {
    let t_frames = target.nrows();
    // zero-phase start: spectrum = magnitudes
    let mut spectrum: Array2<Complex<f32>> = target.mapv(|m| Complex::new(m as f32, 0.0));
    let mut audio = istft(&spectrum, grid);
    for _ in 0..n_iterations {
        let rebuilt = stft_complex(&audio, grid, t_frames);
        // keep the rebuilt phase, enforce the target magnitudes
        for (slot, (c, &m)) in spectrum.iter_mut().zip(rebuilt.iter().zip(target.iter())) {
            let norm = c.norm();
            *slot = if norm > 1e-20 {
                c * (m as f32 / norm)
            } else {
                Complex::new(m as f32, 0.0)
            };
        }
        audio = istft(&spectrum, grid);
    }
    let err = spectral_convergence(&stft_complex(&audio, grid, t_frames), target);
    (audio, err)
}

fn mel_target(mel: &MelSpectrogram, grid: &FrameGrid) -> Array2<f64> {
    let mel_mag = mel.data.mapv(|v| (v as f64).exp());
    mel_to_linear(&mel_mag, grid)
}

/// Invert a log-Mel spectrogram to a waveform.
///
/// Exponentiates the log-Mel values, maps them to a linear magnitude
/// spectrogram through the regularized filterbank pseudo-inverse (negative
/// values clamped to zero), then runs `n_iterations` of alternating
/// projection from a zero-phase start. Output length is `T * hop` samples.
pub fn mel_to_audio(mel: &MelSpectrogram, grid: &FrameGrid, n_iterations: usize) -> Result<Vec<f32>> {
    if n_iterations == 0 {
        return Err(Error::Config("mel_to_audio needs n_iterations >= 1".into()));
    }
    if mel.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Audio("mel input contains non-finite values".into()));
    }
    let (audio, _) = griffin_lim(&mel_target(mel, grid), grid, n_iterations);

    // trim the analysis centering so frame t lines up with sample t * hop
    let left = (grid.window_length - grid.hop_length) / 2;
    let want = mel.num_frames() * grid.hop_length;
    let end = (left + want).min(audio.len());
    Ok(audio[left..end].to_vec())
}

/// Spectral-convergence error of the inversion after `n` iterations against
/// the pseudo-inverse magnitude target (used by the monotonicity checks).
pub fn inversion_error(mel: &MelSpectrogram, grid: &FrameGrid, n_iterations: usize) -> Result<f64> {
    if n_iterations == 0 {
        return Err(Error::Config("inversion_error needs n_iterations >= 1".into()));
    }
    let (_, err) = griffin_lim(&mel_target(mel, grid), grid, n_iterations);
    Ok(err)
}

/// RMS level of a waveform in dB relative to full scale (1.0).
pub fn rms_dbfs(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let ms = samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64;
    10.0 * ms.max(1e-300).log10()
}

/// Frequency (Hz) of the strongest spectral peak of `samples`.
pub fn dominant_frequency(samples: &[f32], grid: &FrameGrid) -> f64 {
    let window = grid.window_length;
    let mag = stft_magnitude(samples, grid);
    // average magnitude over frames, peak over bins
    let mean = mag.sum_axis(ndarray::Axis(0));
    let peak = mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    peak as f64 * grid.sample_rate as f64 / window as f64
}
