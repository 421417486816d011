//! Synthetic toy-piano corpus with exactly controllable articulation and
//! dynamics.
//!
//! Pieces come in four style cells — {staccato, legato} x {soft, loud} — in
//! round-robin order. Pieces within one group of four share the same melody
//! and velocity pattern, so only the style factors differ across cells. The
//! whole corpus is a pure function of one seed.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::repr::{FrameGrid, NoteEvent};
use crate::rng::{derive_rng, stream};

/// Articulation style of a synthetic piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Articulation {
    /// Short detached notes of fixed duration.
    Staccato,
    /// Each note held until the next onset.
    Legato,
}

/// Dynamics style of a synthetic piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    /// Velocities entirely at or below the 70 threshold.
    Soft,
    /// Velocities entirely above the 70 threshold.
    Loud,
}

impl std::fmt::Display for Articulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Articulation::Staccato => "staccato",
            Articulation::Legato => "legato",
        })
    }
}

impl std::fmt::Display for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dynamics::Soft => "soft",
            Dynamics::Loud => "loud",
        })
    }
}

/// Style parameters of one piece.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StyleSpec {
    pub articulation_mode: Articulation,
    pub dynamics_mode: Dynamics,
    /// Note length used by staccato pieces, in seconds.
    pub staccato_duration: f64,
    /// Inclusive velocity range for soft pieces; `soft.1 <= 70`.
    pub soft_velocities: (u8, u8),
    /// Inclusive velocity range for loud pieces; `loud.0 > 70`.
    pub loud_velocities: (u8, u8),
}

impl StyleSpec {
    fn base(articulation_mode: Articulation, dynamics_mode: Dynamics) -> Self {
        StyleSpec {
            articulation_mode,
            dynamics_mode,
            staccato_duration: 0.12,
            soft_velocities: (30, 60),
            loud_velocities: (85, 115),
        }
    }

    /// Velocity range of this piece's dynamics cell.
    pub fn velocity_range(&self) -> (u8, u8) {
        match self.dynamics_mode {
            Dynamics::Soft => self.soft_velocities,
            Dynamics::Loud => self.loud_velocities,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.soft_velocities.0 >= 1
            && self.soft_velocities.0 <= self.soft_velocities.1
            && self.soft_velocities.1 <= 70)
        {
            return Err(Error::Config(format!(
                "soft velocity range {:?} must sit in [1, 70]",
                self.soft_velocities
            )));
        }
        if !(self.loud_velocities.0 > 70
            && self.loud_velocities.0 <= self.loud_velocities.1
            && self.loud_velocities.1 <= 127)
        {
            return Err(Error::Config(format!(
                "loud velocity range {:?} must sit in (70, 127]",
                self.loud_velocities
            )));
        }
        if !(self.staccato_duration > 0.0 && self.staccato_duration < INTER_ONSET_S) {
            return Err(Error::Config(format!(
                "staccato_duration {} must be in (0, {INTER_ONSET_S})",
                self.staccato_duration
            )));
        }
        Ok(())
    }
}

/// One generated piece: events, rendered audio at the grid rate, its style
/// cell, and the derived seed that reproduces it.
#[derive(Debug, Clone)]
pub struct ToyPiece {
    pub events: Vec<NoteEvent>,
    pub audio: Vec<f32>,
    pub style: StyleSpec,
    pub seed: u64,
}

/// Corpus generation parameters.
#[derive(Debug, Clone)]
pub struct CorpusParams {
    pub seed: u64,
    pub n_pieces: usize,
    pub piece_length_s: f64,
    pub staccato_duration: f64,
    pub soft_velocities: (u8, u8),
    pub loud_velocities: (u8, u8),
}

impl CorpusParams {
    pub fn new(seed: u64, n_pieces: usize, piece_length_s: f64) -> Self {
        let base = StyleSpec::base(Articulation::Staccato, Dynamics::Soft);
        CorpusParams {
            seed,
            n_pieces,
            piece_length_s,
            staccato_duration: base.staccato_duration,
            soft_velocities: base.soft_velocities,
            loud_velocities: base.loud_velocities,
        }
    }

    fn style_for_cell(&self, cell: usize) -> StyleSpec {
        let articulation = if cell % 2 == 0 {
            Articulation::Staccato
        } else {
            Articulation::Legato
        };
        let dynamics = if (cell / 2) % 2 == 0 {
            Dynamics::Soft
        } else {
            Dynamics::Loud
        };
        StyleSpec {
            staccato_duration: self.staccato_duration,
            soft_velocities: self.soft_velocities,
            loud_velocities: self.loud_velocities,
            ..StyleSpec::base(articulation, dynamics)
        }
    }
}

/// Fixed spacing between note onsets, seconds.
pub const INTER_ONSET_S: f64 = 0.5;
/// Peak envelope amplitude of a velocity-127 note.
pub const MAX_AMPLITUDE: f32 = 0.5;
/// Exponential decay rate of the note envelope, 1/s.
const DECAY_PER_S: f64 = 3.0;
/// Release ramp after the gate closes, seconds.
const RELEASE_S: f64 = 0.010;
/// Number of harmonics in the toy-piano timbre.
const N_HARMONICS: usize = 4;
/// Melody pitch range (inclusive).
const MELODY_LO: u8 = 48;
const MELODY_HI: u8 = 84;

/// Render one toy-piano note: the first four harmonics with 1/k rolloff, an
/// exponential decay, and a linear 10 ms release after `duration_s`.
/// Harmonics above Nyquist are dropped. Output length covers the release.
pub fn render_toy_note(
    pitch: u8,
    duration_s: f64,
    velocity: u8,
    grid: &FrameGrid,
) -> Result<Vec<f32>> {
    let ev = NoteEvent::new(pitch, 0.0, duration_s, velocity)?;
    let sr = grid.sample_rate as f64;
    let nyquist = sr / 2.0;
    let f0 = ev.frequency();

    let harmonics: Vec<(f64, f64)> = (1..=N_HARMONICS)
        .map(|k| (k as f64 * f0, 1.0 / k as f64))
        .filter(|&(f, _)| f < nyquist)
        .collect();
    let weight_sum: f64 = harmonics.iter().map(|&(_, w)| w).sum();
    let n = ((duration_s + RELEASE_S) * sr).ceil() as usize;
    let scale = MAX_AMPLITUDE as f64 * velocity as f64 / 127.0;

    let mut out = vec![0.0f32; n];
    if weight_sum == 0.0 {
        return Ok(out);
    }
    for (i, slot) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let gate = if t < duration_s {
            1.0
        } else {
            (1.0 - (t - duration_s) / RELEASE_S).max(0.0)
        };
        let env = (-DECAY_PER_S * t).exp() * gate;
        let mut v = 0.0;
        for &(f, w) in &harmonics {
            v += w * (2.0 * std::f64::consts::PI * f * t).sin();
        }
        *slot = (scale * env * v / weight_sum) as f32;
    }
    Ok(out)
}

fn melody(params: &CorpusParams, group: usize, n_notes: usize) -> Vec<u8> {
    let mut rng = derive_rng(params.seed, &[stream::MELODY, group as u64]);
    let mut pitch = rng.random_range(MELODY_LO..=MELODY_HI) as i32;
    let mut pitches = Vec::with_capacity(n_notes);
    for _ in 0..n_notes {
        pitches.push(pitch as u8);
        let step = rng.random_range(-6i32..=6);
        pitch = (pitch + step).clamp(MELODY_LO as i32, MELODY_HI as i32);
    }
    pitches
}

/// Uniform draws in [0, 1), shared across a group so soft and loud cells get
/// the same velocity *pattern* mapped onto their own ranges.
fn velocity_pattern(params: &CorpusParams, group: usize, n_notes: usize) -> Vec<f64> {
    let mut rng = derive_rng(params.seed, &[stream::VELOCITY, group as u64]);
    (0..n_notes).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn events_for_piece(params: &CorpusParams, index: usize, style: &StyleSpec) -> Vec<NoteEvent> {
    let group = index / 4;
    // leave room at the end for the last note plus its release
    let usable = params.piece_length_s - INTER_ONSET_S - 2.0 * RELEASE_S;
    let n_notes = (usable / INTER_ONSET_S).floor() as usize;
    let pitches = melody(params, group, n_notes);
    let pattern = velocity_pattern(params, group, n_notes);
    let (vlo, vhi) = style.velocity_range();

    (0..n_notes)
        .map(|i| {
            let onset = i as f64 * INTER_ONSET_S;
            let duration = match style.articulation_mode {
                Articulation::Staccato => style.staccato_duration,
                Articulation::Legato => INTER_ONSET_S,
            };
            let velocity = vlo + (pattern[i] * (vhi - vlo + 1) as f64).floor() as u8;
            NoteEvent {
                pitch: pitches[i],
                onset,
                offset: onset + duration,
                velocity: velocity.min(vhi),
            }
        })
        .collect()
}

/// Mix rendered notes into a piece buffer of exactly
/// `ceil(piece_length_s * sample_rate)` samples.
pub fn render_piece(
    events: &[NoteEvent],
    piece_length_s: f64,
    grid: &FrameGrid,
) -> Result<Vec<f32>> {
    let sr = grid.sample_rate as f64;
    let n = (piece_length_s * sr).ceil() as usize;
    let mut audio = vec![0.0f32; n];
    for ev in events {
        let note = render_toy_note(ev.pitch, ev.duration(), ev.velocity, grid)?;
        let start = (ev.onset * sr).round() as usize;
        for (i, &s) in note.iter().enumerate() {
            if start + i < n {
                audio[start + i] += s;
            }
        }
    }
    Ok(audio)
}

/// Generate the corpus: `n_pieces` pieces cycling through the four style
/// cells, deterministically from `params.seed`.
pub fn generate_corpus(params: &CorpusParams, grid: &FrameGrid) -> Result<Vec<ToyPiece>> {
    if params.n_pieces < 4 {
        return Err(Error::Config(format!(
            "need at least 4 pieces (one per style cell), got {}",
            params.n_pieces
        )));
    }
    if params.piece_length_s < 2.0 * INTER_ONSET_S {
        return Err(Error::Config(format!(
            "piece_length_s {} too short for any notes",
            params.piece_length_s
        )));
    }
    grid.validate()?;
    params.style_for_cell(0).validate()?;

    (0..params.n_pieces)
        .map(|index| {
            let style = params.style_for_cell(index % 4);
            let events = events_for_piece(params, index, &style);
            let audio = render_piece(&events, params.piece_length_s, grid)?;
            Ok(ToyPiece {
                events,
                audio,
                style,
                seed: crate::rng::derive_seed(params.seed, &[index as u64]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{label_articulation, label_dynamics, mel_spectrogram, rasterize};

    fn grid() -> FrameGrid {
        FrameGrid::new(16_000, 1024, 2048, 30.0, 8000.0).unwrap()
    }

    #[test]
    fn note_velocity_scaling_is_exactly_linear() {
        let g = grid();
        let a = render_toy_note(60, 0.3, 127, &g).unwrap();
        let b = render_toy_note(60, 0.3, 64, &g).unwrap();
        let peak_a = a.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        assert!(peak_a <= MAX_AMPLITUDE * 1.0001);
        for (x, y) in a.iter().zip(&b) {
            assert!((x * 64.0 / 127.0 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn note_rendering_is_deterministic() {
        let g = grid();
        let a = render_toy_note(72, 0.2, 90, &g).unwrap();
        let b = render_toy_note(72, 0.2, 90, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_note_occupies_expected_mel_frames() {
        // 0.1 s note, fps 50: ~5 frames above the log floor
        let g = FrameGrid::new(16_000, 320, 1024, 30.0, 8000.0).unwrap();
        let note = render_toy_note(60, 0.1, 127, &g).unwrap();
        let mut audio = note;
        audio.resize(16_000, 0.0); // 1 s buffer
        let mel = mel_spectrogram(&audio, 16_000, &g).unwrap();
        let floor = crate::repr::mel_log_floor();
        let active = mel
            .data
            .rows()
            .into_iter()
            .filter(|r| r.iter().any(|&v| v > floor + 1e-3))
            .count();
        // window smearing adds a couple of frames on each side
        assert!((4..=12).contains(&active), "active frames: {active}");
    }

    #[test]
    fn harmonics_above_nyquist_are_dropped() {
        let g = grid();
        // pitch 108 = C8 ~ 4186 Hz; harmonics 2..4 all above 8 kHz Nyquist
        let hi = render_toy_note(108, 0.1, 100, &g).unwrap();
        assert!(hi.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn corpus_has_one_piece_per_cell_and_is_deterministic() {
        let g = grid();
        let params = CorpusParams::new(9, 4, 4.0);
        let corpus = generate_corpus(&params, &g).unwrap();
        assert_eq!(corpus.len(), 4);
        let cells: Vec<(Articulation, Dynamics)> = corpus
            .iter()
            .map(|p| (p.style.articulation_mode, p.style.dynamics_mode))
            .collect();
        assert_eq!(
            cells,
            vec![
                (Articulation::Staccato, Dynamics::Soft),
                (Articulation::Legato, Dynamics::Soft),
                (Articulation::Staccato, Dynamics::Loud),
                (Articulation::Legato, Dynamics::Loud),
            ]
        );

        let corpus2 = generate_corpus(&params, &g).unwrap();
        for (a, b) in corpus.iter().zip(&corpus2) {
            assert_eq!(a.events, b.events);
            assert_eq!(a.audio, b.audio);
        }
    }

    #[test]
    fn too_few_pieces_is_rejected() {
        assert!(generate_corpus(&CorpusParams::new(1, 3, 4.0), &grid()).is_err());
    }

    #[test]
    fn staccato_notes_are_shorter_than_legato_on_same_melody() {
        let g = grid();
        let corpus = generate_corpus(&CorpusParams::new(5, 4, 4.0), &g).unwrap();
        let stac = &corpus[0];
        let leg = &corpus[1];
        // same group: identical melodies
        let melody_a: Vec<u8> = stac.events.iter().map(|e| e.pitch).collect();
        let melody_b: Vec<u8> = leg.events.iter().map(|e| e.pitch).collect();
        assert_eq!(melody_a, melody_b);
        let mean = |evs: &[NoteEvent]| {
            evs.iter().map(|e| e.duration()).sum::<f64>() / evs.len() as f64
        };
        assert!(mean(&stac.events) < mean(&leg.events));
    }

    #[test]
    fn labels_match_style_intent_exactly_on_rolls() {
        let g = grid();
        let params = CorpusParams::new(3, 8, 4.0);
        for piece in generate_corpus(&params, &g).unwrap() {
            let (_, frame) = rasterize(&piece.events, &g, params.piece_length_s).unwrap();
            let art = label_articulation(&frame);
            let dyn_ = label_dynamics(&piece.events, &g, frame.num_frames());
            let loud = piece.style.dynamics_mode == Dynamics::Loud;
            for t in 0..frame.num_frames() {
                let active = frame.data.row(t).iter().any(|&v| v != 0);
                assert_eq!(art[t] == 1, active);
                assert_eq!(dyn_[t] == 1, active && loud, "frame {t}");
            }
        }
    }

    #[test]
    fn loud_cells_average_above_70_soft_below() {
        let g = grid();
        let corpus = generate_corpus(&CorpusParams::new(7, 8, 4.0), &g).unwrap();
        for piece in corpus {
            let mean: f64 = piece.events.iter().map(|e| e.velocity as f64).sum::<f64>()
                / piece.events.len() as f64;
            match piece.style.dynamics_mode {
                Dynamics::Loud => assert!(mean > 70.0),
                Dynamics::Soft => assert!(mean < 70.0),
            }
        }
    }

    #[test]
    fn mel_activity_agrees_with_articulation_labels() {
        let g = grid();
        let params = CorpusParams::new(21, 4, 4.0);
        for piece in generate_corpus(&params, &g).unwrap() {
            let (_, frame) = rasterize(&piece.events, &g, params.piece_length_s).unwrap();
            let art = label_articulation(&frame);
            let mel = mel_spectrogram(&piece.audio, g.sample_rate, &g).unwrap();
            let floor = crate::repr::mel_log_floor();
            let t = art.len().min(mel.num_frames());
            let active_frames: Vec<usize> = (0..t).filter(|&i| art[i] == 1).collect();
            let agree = active_frames
                .iter()
                .filter(|&&i| mel.data.row(i).iter().any(|&v| v > floor + 1e-3))
                .count();
            let ratio = agree as f64 / active_frames.len() as f64;
            assert!(ratio >= 0.99, "mel/label agreement {ratio}");
        }
    }
}
