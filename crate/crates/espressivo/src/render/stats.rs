//! Measurable spectrogram statistics for style factors, plus rank
//! correlation. These turn "notes sustain longer" and "the amplitude
//! increases" into numbers the tests can compare.

use crate::repr::mel::{mel_log_floor, MelSpectrogram};
use crate::repr::OnsetRoll;

/// True if frame `t` carries energy above the log floor by `margin`
/// (log units).
fn frame_active(mel: &MelSpectrogram, t: usize, margin: f32) -> bool {
    let threshold = mel_log_floor() + margin;
    mel.data.row(t).iter().any(|&v| v > threshold)
}

/// Mean number of consecutive active frames after each onset, capped at the
/// next onset. Staccato renderings score low, legato high.
pub fn mean_note_sustain_frames(mel: &MelSpectrogram, onset: &OnsetRoll, margin: f32) -> f64 {
    let t_frames = mel.num_frames().min(onset.num_frames());
    let onset_frames: Vec<usize> = (0..t_frames)
        .filter(|&t| onset.data.row(t).iter().any(|&v| v != 0))
        .collect();
    if onset_frames.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    for (i, &start) in onset_frames.iter().enumerate() {
        let end = onset_frames.get(i + 1).copied().unwrap_or(t_frames);
        let mut run = 0;
        for t in start..end {
            if frame_active(mel, t, margin) {
                run += 1;
            } else {
                break;
            }
        }
        total += run;
    }
    total as f64 / onset_frames.len() as f64
}

/// Mean linear Mel magnitude over all cells: a loudness proxy.
pub fn mean_frame_energy(mel: &MelSpectrogram) -> f64 {
    let n = mel.data.len().max(1);
    mel.data.iter().map(|&v| (v as f64).exp()).sum::<f64>() / n as f64
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn spearman_detects_monotone_trends() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let inc = [0.1, 0.4, 0.9, 1.6, 2.5];
        let dec = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &inc) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &dec) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 1.0, 2.0, 2.0];
        let r = spearman(&x, &y);
        assert!(r > 0.8 && r <= 1.0);
    }

    #[test]
    fn sustain_measures_run_length_after_onsets() {
        let floor = crate::repr::mel_log_floor();
        let mut mel = Array2::from_elem((20, 80), floor);
        let mut onset = Array2::<u8>::zeros((20, 88));
        // note at frame 2 lasting 4 frames; note at frame 10 lasting 8 frames
        onset[(2, 40)] = 1;
        onset[(10, 45)] = 1;
        for t in 2..6 {
            mel[(t, 40)] = floor + 5.0;
        }
        for t in 10..18 {
            mel[(t, 45)] = floor + 5.0;
        }
        let sustain = mean_note_sustain_frames(
            &MelSpectrogram { data: mel },
            &OnsetRoll { data: onset },
            2.0,
        );
        assert!((sustain - 6.0).abs() < 1e-12, "sustain {sustain}");
    }

    #[test]
    fn energy_orders_soft_below_loud() {
        let floor = crate::repr::mel_log_floor();
        let soft = MelSpectrogram {
            data: Array2::from_elem((10, 80), floor + 1.0),
        };
        let loud = MelSpectrogram {
            data: Array2::from_elem((10, 80), floor + 4.0),
        };
        assert!(mean_frame_energy(&soft) < mean_frame_energy(&loud));
    }
}
