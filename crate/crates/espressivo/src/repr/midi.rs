//! Standard MIDI File reader (formats 0 and 1) and a minimal writer.
//!
//! The reader turns note-on/note-off pairs into [`NoteEvent`]s with absolute
//! times in seconds, applying the tempo map across all tracks. Sustain-pedal
//! and every other controller message are ignored. Overlapping note-ons on
//! the same pitch/channel are paired first-on/first-off.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::repr::grid::{PITCH_MAX, PITCH_MIN};
use crate::repr::note::NoteEvent;

/// Result of parsing one SMF: the note list plus non-fatal warnings
/// (unmatched note-ons closed at track end, skipped out-of-range pitches,
/// orphan note-offs).
#[derive(Debug, Clone)]
pub struct MidiFile {
    /// Note events sorted by onset time.
    pub events: Vec<NoteEvent>,
    /// Human-readable warnings; empty for a fully well-formed file.
    pub warnings: Vec<String>,
}

impl MidiFile {
    /// True if any note had to be repaired while parsing.
    pub fn has_warnings(&self) -> bool {
        !self.warnings.is_empty()
    }
}

const DEFAULT_TEMPO: u32 = 500_000; // microseconds per quarter note

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::MidiParse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        if self.pos >= self.data.len() {
            return self.err("unexpected end of file");
        }
        let b = self.data[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes([
            self.u8()?,
            self.u8()?,
            self.u8()?,
            self.u8()?,
        ]))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return self.err(format!("expected {n} bytes, only {} left", self.remaining()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn skip(&mut self, n: usize) -> Result<()> {
        self.bytes(n).map(|_| ())
    }

    /// Variable-length quantity, at most 4 bytes.
    fn varlen(&mut self) -> Result<u32> {
        let mut value: u32 = 0;
        for i in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
            if i == 3 {
                break;
            }
        }
        self.err("variable-length quantity longer than 4 bytes")
    }
}

/// One raw note-on/off boundary in ticks, before tempo conversion.
#[derive(Debug, Clone, Copy)]
enum RawNote {
    On {
        tick: u64,
        channel: u8,
        pitch: u8,
        velocity: u8,
    },
    Off {
        tick: u64,
        channel: u8,
        pitch: u8,
    },
}

/// Piecewise-linear tick → seconds conversion built from Set Tempo events.
struct TempoMap {
    // (tick, seconds at that tick, microseconds per quarter from that tick on)
    segments: Vec<(u64, f64, u32)>,
    ticks_per_quarter: u32,
}

impl TempoMap {
    fn new(mut changes: Vec<(u64, u32)>, ticks_per_quarter: u32) -> Self {
        changes.sort_by_key(|&(tick, _)| tick);
        let mut segments = vec![(0u64, 0.0f64, DEFAULT_TEMPO)];
        for (tick, tempo) in changes {
            let &(last_tick, last_secs, last_tempo) = segments.last().unwrap();
            let secs = last_secs
                + (tick - last_tick) as f64 * last_tempo as f64
                    / (1e6 * ticks_per_quarter as f64);
            if tick == last_tick {
                // a later change at the same tick replaces the earlier one
                *segments.last_mut().unwrap() = (tick, last_secs, tempo);
            } else {
                segments.push((tick, secs, tempo));
            }
        }
        TempoMap {
            segments,
            ticks_per_quarter,
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let idx = match self.segments.binary_search_by_key(&tick, |s| s.0) {
            Ok(i) => i,
            Err(i) => i - 1, // segments[0].0 == 0, so i >= 1 here
        };
        let (seg_tick, seg_secs, tempo) = self.segments[idx];
        seg_secs + (tick - seg_tick) as f64 * tempo as f64 / (1e6 * self.ticks_per_quarter as f64)
    }
}

/// Parse a Standard MIDI File (type 0 or 1) into note events.
///
/// All tracks are merged; the tempo map is taken from Set Tempo meta events
/// wherever they occur. Returns events sorted by onset. A note-on without a
/// matching note-off is closed at its track's end and flagged in
/// [`MidiFile::warnings`].
pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile> {
    let mut c = Cursor::new(bytes);

    if c.bytes(4).map_err(|_| Error::MidiParse {
        offset: 0,
        message: "file shorter than header".into(),
    })? != b"MThd"
    {
        return Err(Error::MidiParse {
            offset: 0,
            message: "missing MThd header chunk".into(),
        });
    }
    let header_len = c.u32()?;
    if header_len < 6 {
        return c.err(format!("header length {header_len} < 6"));
    }
    let format = c.u16()?;
    let ntrks = c.u16()?;
    let division = c.u16()?;
    c.skip(header_len as usize - 6)?;

    if format > 1 {
        return c.err(format!("unsupported SMF format {format}; only 0 and 1"));
    }
    if format == 0 && ntrks != 1 {
        return c.err(format!("format 0 file must have 1 track, has {ntrks}"));
    }
    if division & 0x8000 != 0 {
        return c.err("SMPTE time division is not supported");
    }
    if division == 0 {
        return c.err("zero ticks-per-quarter division");
    }
    let ticks_per_quarter = division as u32;

    let mut tempo_changes: Vec<(u64, u32)> = Vec::new();
    // (raw notes, end-of-track tick) per track
    let mut tracks: Vec<(Vec<RawNote>, u64)> = Vec::new();

    for _ in 0..ntrks {
        let chunk_start = c.pos;
        let id = c.bytes(4)?;
        let len = c.u32()? as usize;
        if id != b"MTrk" {
            // alien chunks are skipped per the SMF spec
            c.skip(len).map_err(|_| Error::MidiParse {
                offset: chunk_start,
                message: "truncated non-MTrk chunk".into(),
            })?;
            continue;
        }
        let track_end_pos = c.pos + len;
        if track_end_pos > c.data.len() {
            return Err(Error::MidiParse {
                offset: chunk_start,
                message: format!("track chunk length {len} overruns file"),
            });
        }

        let mut raw = Vec::new();
        let mut tick: u64 = 0;
        let mut running_status: Option<u8> = None;
        let mut saw_eot = false;

        while c.pos < track_end_pos {
            tick += c.varlen()? as u64;
            let first = c.u8()?;
            let status = if first & 0x80 != 0 {
                first
            } else {
                // running status reuses the previous channel status byte
                c.pos -= 1;
                match running_status {
                    Some(s) => s,
                    None => return c.err("data byte with no running status"),
                }
            };

            match status {
                0x80..=0xef => {
                    running_status = Some(status);
                    let kind = status & 0xf0;
                    let channel = status & 0x0f;
                    match kind {
                        0x80 | 0x90 | 0xa0 | 0xb0 | 0xe0 => {
                            let d1 = c.u8()?;
                            let d2 = c.u8()?;
                            if d1 > 0x7f || d2 > 0x7f {
                                c.pos -= 1;
                                return c.err("data byte with high bit set");
                            }
                            if kind == 0x90 && d2 > 0 {
                                raw.push(RawNote::On {
                                    tick,
                                    channel,
                                    pitch: d1,
                                    velocity: d2,
                                });
                            } else if kind == 0x80 || kind == 0x90 {
                                raw.push(RawNote::Off {
                                    tick,
                                    channel,
                                    pitch: d1,
                                });
                            }
                            // 0xb0 (controllers, incl. sustain CC64), 0xa0, 0xe0: ignored
                        }
                        0xc0 | 0xd0 => {
                            let d1 = c.u8()?;
                            if d1 > 0x7f {
                                c.pos -= 1;
                                return c.err("data byte with high bit set");
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                0xf0 | 0xf7 => {
                    running_status = None;
                    let len = c.varlen()? as usize;
                    c.skip(len)?;
                }
                0xff => {
                    running_status = None;
                    let meta_type = c.u8()?;
                    let len = c.varlen()? as usize;
                    let data = c.bytes(len)?;
                    match meta_type {
                        0x51 => {
                            if len != 3 {
                                return c.err(format!("tempo meta event of length {len} != 3"));
                            }
                            let tempo =
                                u32::from_be_bytes([0, data[0], data[1], data[2]]).max(1);
                            tempo_changes.push((tick, tempo));
                        }
                        0x2f => {
                            saw_eot = true;
                            break;
                        }
                        _ => {}
                    }
                }
                _ => {
                    c.pos -= 1;
                    return c.err(format!("unexpected status byte 0x{status:02x}"));
                }
            }
        }

        if !saw_eot && c.pos != track_end_pos {
            return Err(Error::MidiParse {
                offset: c.pos,
                message: "event ran past declared track length".into(),
            });
        }
        c.pos = track_end_pos;
        tracks.push((raw, tick));
    }

    let tempo = TempoMap::new(tempo_changes, ticks_per_quarter);
    let mut events = Vec::new();
    let mut warnings = Vec::new();

    for (track_idx, (raw, eot_tick)) in tracks.iter().enumerate() {
        // FIFO queues per (channel, pitch): first-on/first-off pairing
        let mut open: Vec<VecDeque<(u64, u8)>> = vec![VecDeque::new(); 16 * 128];
        for note in raw {
            match *note {
                RawNote::On {
                    tick,
                    channel,
                    pitch,
                    velocity,
                } => open[channel as usize * 128 + pitch as usize].push_back((tick, velocity)),
                RawNote::Off {
                    tick,
                    channel,
                    pitch,
                } => {
                    match open[channel as usize * 128 + pitch as usize].pop_front() {
                        Some((on_tick, velocity)) => {
                            push_note(&mut events, &mut warnings, &tempo, on_tick, tick, pitch,
                                velocity);
                        }
                        None => warnings.push(format!(
                            "track {track_idx}: note-off without note-on (pitch {pitch}, tick {tick})"
                        )),
                    }
                }
            }
        }
        for (slot, queue) in open.iter().enumerate() {
            let pitch = (slot % 128) as u8;
            for &(on_tick, velocity) in queue {
                warnings.push(format!(
                    "track {track_idx}: note-on without note-off (pitch {pitch}, tick {on_tick}); closed at track end"
                ));
                push_note(&mut events, &mut warnings, &tempo, on_tick, *eot_tick, pitch, velocity);
            }
        }
    }

    events.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.offset.total_cmp(&b.offset))
    });
    Ok(MidiFile { events, warnings })
}

fn push_note(
    events: &mut Vec<NoteEvent>,
    warnings: &mut Vec<String>,
    tempo: &TempoMap,
    on_tick: u64,
    off_tick: u64,
    pitch: u8,
    velocity: u8,
) {
    if pitch < PITCH_MIN || pitch > PITCH_MAX {
        warnings.push(format!(
            "pitch {pitch} outside piano range [{PITCH_MIN}, {PITCH_MAX}]; note skipped"
        ));
        return;
    }
    let onset = tempo.seconds(on_tick);
    let mut offset = tempo.seconds(off_tick.max(on_tick));
    if offset <= onset {
        warnings.push(format!(
            "zero-length note (pitch {pitch}, tick {on_tick}); clamped to 1 ms"
        ));
        offset = onset + 1e-3;
    }
    events.push(NoteEvent {
        pitch,
        onset,
        offset,
        velocity,
    });
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7f) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let mut b = stack[i];
        if i > 0 {
            b |= 0x80;
        }
        out.push(b);
    }
}

/// Serialize note events as a single-track (format 0) SMF.
///
/// `ticks_per_quarter` sets the timing resolution and `tempo_us` the fixed
/// tempo in microseconds per quarter note. Event times are quantized to the
/// nearest tick.
pub fn write_smf(events: &[NoteEvent], ticks_per_quarter: u16, tempo_us: u32) -> Vec<u8> {
    assert!(ticks_per_quarter > 0 && ticks_per_quarter < 0x8000);
    let to_tick = |secs: f64| -> u64 {
        (secs * 1e6 * ticks_per_quarter as f64 / tempo_us as f64).round() as u64
    };

    // (tick, is_off, pitch, velocity); offs sort before ons at equal ticks
    let mut boundary: Vec<(u64, bool, u8, u8)> = Vec::with_capacity(events.len() * 2);
    for ev in events {
        let on = to_tick(ev.onset);
        let off = to_tick(ev.offset).max(on + 1);
        boundary.push((on, false, ev.pitch, ev.velocity));
        boundary.push((off, true, ev.pitch, 0));
    }
    boundary.sort_by_key(|&(tick, is_off, pitch, _)| (tick, !is_off, pitch));

    let mut track = Vec::new();
    // tempo meta event at tick 0
    push_varlen(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&tempo_us.to_be_bytes()[1..]);

    let mut last_tick = 0u64;
    for (tick, is_off, pitch, velocity) in boundary {
        push_varlen(&mut track, (tick - last_tick) as u32);
        last_tick = tick;
        if is_off {
            track.extend_from_slice(&[0x80, pitch, 0x40]);
        } else {
            track.extend_from_slice(&[0x90, pitch, velocity]);
        }
    }
    // end of track
    push_varlen(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled SMF: one note, pitch 60, 0.0 s - 1.0 s, velocity 80.
    /// 480 ticks/quarter at 500000 us/quarter = 960 ticks per second.
    fn one_note_bytes() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        let track: Vec<u8> = vec![
            0x00, 0x90, 60, 80, // note on at tick 0
            0x87, 0x40, 0x80, 60, 64, // note off after 960 ticks (varlen 0x87 0x40)
            0x00, 0xff, 0x2f, 0x00, // end of track
        ];
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(track.len() as u32).to_be_bytes());
        b.extend_from_slice(&track);
        b
    }

    #[test]
    fn empty_track_gives_no_events() {
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        let track: Vec<u8> = vec![0x00, 0xff, 0x2f, 0x00];
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(track.len() as u32).to_be_bytes());
        b.extend_from_slice(&track);

        let parsed = parse_midi(&b).unwrap();
        assert!(parsed.events.is_empty());
        assert!(!parsed.has_warnings());
    }

    #[test]
    fn single_note_parses_exactly() {
        let parsed = parse_midi(&one_note_bytes()).unwrap();
        assert_eq!(parsed.events.len(), 1);
        let ev = parsed.events[0];
        assert_eq!(ev.pitch, 60);
        assert_eq!(ev.velocity, 80);
        assert!((ev.onset - 0.0).abs() < 1e-9);
        assert!((ev.offset - 1.0).abs() < 1e-9);
        assert!(!parsed.has_warnings());
    }

    #[test]
    fn single_note_matches_independent_reader() {
        // cross-check the hand-assembled bytes against midly
        let bytes = one_note_bytes();
        let smf = midly::Smf::parse(&bytes).unwrap();
        let mut on: Option<(u64, u8, u8)> = None;
        let mut parsed_by_midly = None;
        let mut tick = 0u64;
        for ev in &smf.tracks[0] {
            tick += u32::from(ev.delta) as u64;
            if let midly::TrackEventKind::Midi { message, .. } = ev.kind {
                match message {
                    midly::MidiMessage::NoteOn { key, vel } => {
                        on = Some((tick, key.as_int(), vel.as_int()));
                    }
                    midly::MidiMessage::NoteOff { key, .. } => {
                        let (on_tick, pitch, vel) = on.unwrap();
                        assert_eq!(pitch, key.as_int());
                        parsed_by_midly = Some((on_tick, tick, pitch, vel));
                    }
                    _ => {}
                }
            }
        }
        let (on_tick, off_tick, pitch, vel) = parsed_by_midly.unwrap();
        let ours = parse_midi(&bytes).unwrap().events[0];
        // 480 ticks/quarter at default tempo: 960 ticks per second
        assert_eq!(ours.pitch, pitch);
        assert_eq!(ours.velocity, vel);
        assert!((ours.onset - on_tick as f64 / 960.0).abs() < 1e-9);
        assert!((ours.offset - off_tick as f64 / 960.0).abs() < 1e-9);
    }

    #[test]
    fn overlapping_same_pitch_pairs_first_on_first_off() {
        // two note-ons on pitch 60 at ticks 0 and 480, offs at 960 and 1440
        let mut track: Vec<u8> = Vec::new();
        track.extend_from_slice(&[0x00, 0x90, 60, 80]); // on at 0
        push_varlen(&mut track, 480);
        track.extend_from_slice(&[0x90, 60, 90]); // on at 480
        push_varlen(&mut track, 480);
        track.extend_from_slice(&[0x80, 60, 64]); // off at 960
        push_varlen(&mut track, 480);
        track.extend_from_slice(&[0x80, 60, 64]); // off at 1440
        track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(track.len() as u32).to_be_bytes());
        b.extend_from_slice(&track);

        let parsed = parse_midi(&b).unwrap();
        assert_eq!(parsed.events.len(), 2);
        // first-on/first-off: [0,960) vel 80 and [480,1440) vel 90
        assert!((parsed.events[0].onset - 0.0).abs() < 1e-9);
        assert!((parsed.events[0].offset - 1.0).abs() < 1e-9);
        assert_eq!(parsed.events[0].velocity, 80);
        assert!((parsed.events[1].onset - 0.5).abs() < 1e-9);
        assert!((parsed.events[1].offset - 1.5).abs() < 1e-9);
        assert_eq!(parsed.events[1].velocity, 90);
    }

    #[test]
    fn unmatched_note_on_closes_at_track_end_with_warning() {
        let mut track: Vec<u8> = Vec::new();
        track.extend_from_slice(&[0x00, 0x90, 72, 100]); // on, never released
        push_varlen(&mut track, 960);
        track.extend_from_slice(&[0xff, 0x2f, 0x00]);

        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(track.len() as u32).to_be_bytes());
        b.extend_from_slice(&track);

        let parsed = parse_midi(&b).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert!(parsed.has_warnings());
        assert!((parsed.events[0].offset - 1.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_header_reports_offset() {
        let err = parse_midi(b"MThx\x00\x00\x00\x06").unwrap_err();
        match err {
            Error::MidiParse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn truncated_track_reports_offset() {
        let mut b = one_note_bytes();
        b.truncate(b.len() - 4);
        // declared track length now overruns the file
        assert!(matches!(
            parse_midi(&b),
            Err(Error::MidiParse { .. })
        ));
    }

    #[test]
    fn writer_reader_round_trip() {
        let events = vec![
            NoteEvent::new(60, 0.0, 0.5, 80).unwrap(),
            NoteEvent::new(64, 0.25, 1.0, 45).unwrap(),
            NoteEvent::new(60, 0.75, 1.25, 110).unwrap(),
        ];
        let bytes = write_smf(&events, 480, 500_000);
        let parsed = parse_midi(&bytes).unwrap();
        assert!(!parsed.has_warnings());
        assert_eq!(parsed.events.len(), events.len());
        for (a, b) in parsed.events.iter().zip(&events) {
            assert_eq!(a.pitch, b.pitch);
            assert_eq!(a.velocity, b.velocity);
            assert!((a.onset - b.onset).abs() < 2e-3);
            assert!((a.offset - b.offset).abs() < 2e-3);
        }
    }

    #[test]
    fn writer_output_matches_midly_note_count() {
        let events = vec![
            NoteEvent::new(50, 0.0, 0.4, 30).unwrap(),
            NoteEvent::new(50, 0.2, 0.6, 90).unwrap(),
            NoteEvent::new(88, 0.1, 0.3, 127).unwrap(),
        ];
        let bytes = write_smf(&events, 960, 500_000);
        let smf = midly::Smf::parse(&bytes).unwrap();
        let ons = smf.tracks[0]
            .iter()
            .filter(|ev| {
                matches!(
                    ev.kind,
                    midly::TrackEventKind::Midi {
                        message: midly::MidiMessage::NoteOn { vel, .. },
                        ..
                    } if vel.as_int() > 0
                )
            })
            .count();
        assert_eq!(ons, 3);
    }
}
