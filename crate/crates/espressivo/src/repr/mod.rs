//! Data representation front end.
//!
//! Converts aligned MIDI+audio pairs into the tensors the model consumes:
//! onset roll, frame roll, binary condition sequences, and a log-Mel
//! spectrogram, all on one [`FrameGrid`], plus aligned cropping.

pub mod crop;
pub mod grid;
pub mod mel;
pub mod midi;
pub mod note;
pub mod roll;

pub use crop::{crop_pair, crop_window_frames, AlignedCrop};
pub use grid::{FrameGrid, N_MELS, N_PITCHES, PITCH_MAX, PITCH_MIN};
pub use mel::{mel_log_floor, mel_spectrogram, MelSpectrogram, MEL_MAG_FLOOR};
pub use midi::{parse_midi, write_smf, MidiFile};
pub use note::NoteEvent;
pub use roll::{
    label_articulation, label_conditions, label_dynamics, note_frame_span, rasterize,
    ConditionSequence, FrameRoll, OnsetRoll,
};
