//! Note events: the parsed form of a MIDI performance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::grid::{PITCH_MAX, PITCH_MIN};

/// One piano note with absolute timing in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    /// MIDI pitch in `[21, 108]` (88-key piano range).
    pub pitch: u8,
    /// Onset time in seconds (>= 0).
    pub onset: f64,
    /// Offset time in seconds (> onset).
    pub offset: f64,
    /// MIDI velocity in `[1, 127]`.
    pub velocity: u8,
}

impl NoteEvent {
    /// Build a note event, checking every field invariant.
    pub fn new(pitch: u8, onset: f64, offset: f64, velocity: u8) -> Result<Self> {
        let ev = NoteEvent {
            pitch,
            onset,
            offset,
            velocity,
        };
        ev.validate()?;
        Ok(ev)
    }

    /// Check field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.pitch < PITCH_MIN || self.pitch > PITCH_MAX {
            return Err(Error::InvalidNote(format!(
                "pitch {} outside piano range [{PITCH_MIN}, {PITCH_MAX}]",
                self.pitch
            )));
        }
        if !(self.onset >= 0.0 && self.onset.is_finite()) {
            return Err(Error::InvalidNote(format!(
                "onset {} must be finite and >= 0",
                self.onset
            )));
        }
        if !(self.offset > self.onset && self.offset.is_finite()) {
            return Err(Error::InvalidNote(format!(
                "offset {} must be finite and > onset {}",
                self.offset, self.onset
            )));
        }
        if self.velocity == 0 || self.velocity > 127 {
            return Err(Error::InvalidNote(format!(
                "velocity {} outside [1, 127]",
                self.velocity
            )));
        }
        Ok(())
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    /// Column index of this pitch in an 88-wide roll.
    pub fn pitch_column(&self) -> usize {
        (self.pitch - PITCH_MIN) as usize
    }

    /// Equal-temperament fundamental frequency of this pitch (A4 = 440 Hz).
    pub fn frequency(&self) -> f64 {
        440.0 * ((self.pitch as f64 - 69.0) / 12.0).exp2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_note() {
        let n = NoteEvent::new(60, 0.0, 1.0, 80).unwrap();
        assert_eq!(n.pitch_column(), 39);
        assert!((n.duration() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn a4_is_440() {
        let n = NoteEvent::new(69, 0.0, 1.0, 64).unwrap();
        assert!((n.frequency() - 440.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(NoteEvent::new(20, 0.0, 1.0, 80).is_err());
        assert!(NoteEvent::new(109, 0.0, 1.0, 80).is_err());
        assert!(NoteEvent::new(60, 1.0, 1.0, 80).is_err());
        assert!(NoteEvent::new(60, 0.0, 1.0, 0).is_err());
    }
}
