//! Onset/frame rolls and the binary articulation/dynamics condition labels.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::repr::grid::{FrameGrid, N_PITCHES, PITCH_MAX, PITCH_MIN};
use crate::repr::note::NoteEvent;

/// Binary T x 88 matrix marking only the frame where each note begins.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetRoll {
    pub data: Array2<u8>,
}

/// Binary T x 88 matrix marking every frame during which a note sounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRoll {
    pub data: Array2<u8>,
}

/// Per-frame binary condition labels for the two style factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSequence {
    /// 1 where at least one note is held.
    pub c_art: Array1<u8>,
    /// 1 where the mean velocity of active notes exceeds 70.
    pub c_dyn: Array1<u8>,
}

impl OnsetRoll {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }
}

impl FrameRoll {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }
}

impl ConditionSequence {
    pub fn len(&self) -> usize {
        self.c_art.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_art.is_empty()
    }
}

/// Frame span `[start, end)` a note occupies on `grid`: floor rounding on
/// both boundaries, with a one-frame minimum so zero-length spans are
/// impossible.
pub fn note_frame_span(ev: &NoteEvent, grid: &FrameGrid) -> (usize, usize) {
    let on = grid.frame_at(ev.onset);
    let off = grid.frame_at(ev.offset).max(on + 1);
    (on, off)
}

/// Rasterize note events onto `grid` as an onset roll and a frame roll of
/// `ceil(duration_s * fps)` frames.
pub fn rasterize(
    events: &[NoteEvent],
    grid: &FrameGrid,
    duration_s: f64,
) -> Result<(OnsetRoll, FrameRoll)> {
    let t_frames = grid.frames_for_duration(duration_s);
    let mut onset = Array2::<u8>::zeros((t_frames, N_PITCHES));
    let mut frame = Array2::<u8>::zeros((t_frames, N_PITCHES));

    for ev in events {
        if ev.pitch < PITCH_MIN || ev.pitch > PITCH_MAX {
            return Err(Error::InvalidNote(format!(
                "cannot rasterize event {ev:?}: pitch outside [{PITCH_MIN}, {PITCH_MAX}]"
            )));
        }
        if ev.onset >= duration_s || ev.offset > duration_s {
            return Err(Error::InvalidNote(format!(
                "event {ev:?} extends beyond duration {duration_s} s"
            )));
        }
        let col = ev.pitch_column();
        let (on, off) = note_frame_span(ev, grid);
        let off = off.min(t_frames);
        if on < t_frames {
            onset[(on, col)] = 1;
        }
        for t in on..off {
            frame[(t, col)] = 1;
        }
    }
    Ok((OnsetRoll { data: onset }, FrameRoll { data: frame }))
}

/// Articulation condition: 1 at frame `t` iff at least one note is held,
/// i.e. row `t` of the frame roll is not all zero.
pub fn label_articulation(frame_roll: &FrameRoll) -> Array1<u8> {
    frame_roll
        .data
        .rows()
        .into_iter()
        .map(|row| u8::from(row.iter().any(|&v| v != 0)))
        .collect()
}

/// Dynamics condition: 1 at frame `t` iff notes are active there and their
/// mean velocity is strictly greater than 70.
///
/// A note is active over the same frame span the frame roll uses. Frames
/// with no active notes are labelled 0. The comparison `sum > 70 * count`
/// is exact in integers, so the strict boundary (mean exactly 70 gives 0)
/// cannot be blurred by rounding.
pub fn label_dynamics(events: &[NoteEvent], grid: &FrameGrid, t_frames: usize) -> Array1<u8> {
    let mut vel_sum = vec![0u64; t_frames];
    let mut count = vec![0u64; t_frames];
    for ev in events {
        let (on, off) = note_frame_span(ev, grid);
        for t in on..off.min(t_frames) {
            vel_sum[t] += ev.velocity as u64;
            count[t] += 1;
        }
    }
    (0..t_frames)
        .map(|t| u8::from(count[t] > 0 && vel_sum[t] > 70 * count[t]))
        .collect()
}

/// Both condition sequences for a rasterized piece.
pub fn label_conditions(
    events: &[NoteEvent],
    frame_roll: &FrameRoll,
    grid: &FrameGrid,
) -> ConditionSequence {
    ConditionSequence {
        c_art: label_articulation(frame_roll),
        c_dyn: label_dynamics(events, grid, frame_roll.num_frames()),
    }
}
