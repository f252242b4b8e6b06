//! Standard MIDI File (format 0 and 1) reader and a small format-1 writer.
//!
//! Beats are counted in units of the time-signature denominator, so a bar
//! always holds `numerator` beats. With the default 4/4 a beat is a quarter
//! note and `beat = tick / division`.

use std::collections::{BTreeMap, HashMap, VecDeque};

use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use super::{bars_covering, detect_key, grid_from_timed_chords, IngestError, Song, TimedChord};
use crate::music::{
    default_phrase_boundaries, Beats, ChordSymbol, Key, MelodyNote, MelodySegment, Mode, PitchClass,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmfError {
    #[error("bad magic: expected \"MThd\" header chunk")]
    BadMagic,
    #[error("truncated {0}")]
    Truncated(String),
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division is not supported")]
    SmpteDivision,
    #[error("malformed event at track {track}, byte {offset}: {message}")]
    Malformed {
        track: usize,
        offset: usize,
        message: String,
    },
    #[error("file contains no notes")]
    NoNotes,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], SmfError> {
        if self.remaining() < n {
            return Err(SmfError::Truncated(what.to_string()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, SmfError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, SmfError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self, what: &str) -> Result<u32, SmfError> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8(what)?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(SmfError::Truncated(format!("{what}: variable-length quantity exceeds 4 bytes")))
    }
}

#[derive(Debug, Clone, Copy)]
struct RawNote {
    pitch: u8,
    start: u64,
    end: u64,
}

#[derive(Debug, Default)]
struct TrackData {
    notes: Vec<RawNote>,
    name: Option<String>,
    chords: Vec<(u64, ChordSymbol)>,
    time_signature: Option<(u64, u32, u32)>,
    key_signature: Option<(u64, Key)>,
    tempo: Option<(u64, u32)>,
}

fn key_from_signature(sharps: i8, minor: bool) -> Key {
    let major_tonic = PitchClass::new(sharps as i32 * 7);
    if minor {
        Key::new(major_tonic.transpose(9), Mode::Minor)
    } else {
        Key::new(major_tonic, Mode::Major)
    }
}

fn signature_from_key(key: Key) -> (i8, u8) {
    let major_tonic = match key.mode {
        Mode::Major => key.tonic,
        Mode::Minor => key.tonic.transpose(3),
    };
    let sharps = (major_tonic.value() as i32 * 7).rem_euclid(12);
    let sharps = if sharps > 6 { sharps - 12 } else { sharps };
    (sharps as i8, matches!(key.mode, Mode::Minor) as u8)
}

fn parse_track(data: &[u8], track: usize) -> Result<TrackData, SmfError> {
    let mut r = Reader::new(data);
    let mut out = TrackData::default();
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();
    let what = format!("track {track} event");

    while r.remaining() > 0 {
        tick += r.vlq(&what)? as u64;
        let offset = r.pos;
        let first = r.u8(&what)?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            running.ok_or_else(|| SmfError::Malformed {
                track,
                offset,
                message: "data byte without running status".into(),
            })?
        };
        match status {
            0xff => {
                running = None;
                let kind = r.u8(&what)?;
                let len = r.vlq(&what)? as usize;
                let body = r.take(len, &what)?;
                match kind {
                    0x2f => break,
                    0x03 if out.name.is_none() => out.name = Some(String::from_utf8_lossy(body).into_owned()),
                    0x01 | 0x05 | 0x06 => {
                        if let Ok(sym) = String::from_utf8_lossy(body).trim().parse::<ChordSymbol>() {
                            out.chords.push((tick, sym));
                        }
                    }
                    0x51 if len == 3 && out.tempo.is_none() => {
                        let us = u32::from_be_bytes([0, body[0], body[1], body[2]]);
                        out.tempo = Some((tick, us));
                    }
                    0x58 if len >= 2 && out.time_signature.is_none() => {
                        let den = 1u32.checked_shl(body[1] as u32).unwrap_or(0);
                        if body[0] > 0 && den > 0 {
                            out.time_signature = Some((tick, body[0] as u32, den));
                        }
                    }
                    0x59 if len == 2 && out.key_signature.is_none() => {
                        out.key_signature = Some((tick, key_from_signature(body[0] as i8, body[1] == 1)));
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq(&what)? as usize;
                r.take(len, &what)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let mut data1 = || -> Result<u8, SmfError> {
                    if first & 0x80 == 0 {
                        Ok(first)
                    } else {
                        r.u8(&what)
                    }
                };
                let d1 = data1()?;
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let d2 = if matches!(kind, 0xc0 | 0xd0) { 0 } else { r.u8(&what)? };
                if d1 > 127 || d2 > 127 {
                    return Err(SmfError::Malformed {
                        track,
                        offset,
                        message: "data byte above 0x7f".into(),
                    });
                }
                match (kind, d2) {
                    (0x90, v) if v > 0 => {
                        let q = open.entry((channel, d1)).or_default();
                        // a re-struck pitch ends the sounding one
                        if let Some(start) = q.pop_front() {
                            out.notes.push(RawNote { pitch: d1, start, end: tick });
                        }
                        q.push_back(tick);
                    }
                    (0x80, _) | (0x90, _) => {
                        if let Some(start) = open.get_mut(&(channel, d1)).and_then(|q| q.pop_front()) {
                            out.notes.push(RawNote { pitch: d1, start, end: tick });
                        }
                    }
                    _ => {}
                }
            }
            _ => {
                return Err(SmfError::Malformed {
                    track,
                    offset,
                    message: format!("unexpected status byte {status:#04x}"),
                })
            }
        }
    }

    let mut dangling: Vec<_> = open
        .into_iter()
        .flat_map(|((_, pitch), starts)| starts.into_iter().map(move |s| (pitch, s)))
        .collect();
    dangling.sort_unstable();
    for (pitch, start) in dangling {
        log::warn!("track {track}: note {pitch} at tick {start} has no note-off; closing at track end");
        out.notes.push(RawNote { pitch, start, end: tick });
    }
    out.notes.retain(|n| n.end > n.start);
    out.notes.sort_by_key(|n| (n.start, n.pitch));
    Ok(out)
}

fn has_simultaneous_onsets(notes: &[RawNote]) -> bool {
    notes.windows(2).any(|w| w[0].start == w[1].start)
}

/// Highest note per onset, each note cut at the next onset.
fn make_monophonic(notes: &[RawNote]) -> Vec<RawNote> {
    let mut mono: Vec<RawNote> = Vec::with_capacity(notes.len());
    for n in notes {
        match mono.last_mut() {
            Some(last) if last.start == n.start => {
                if n.pitch > last.pitch {
                    *last = *n;
                }
            }
            _ => mono.push(*n),
        }
    }
    for i in 1..mono.len() {
        let next = mono[i].start;
        if mono[i - 1].end > next {
            mono[i - 1].end = next;
        }
    }
    mono
}

/// Parses a format-0 or format-1 Standard MIDI File into a melody-only or
/// chord-annotated [`Song`]. Text, lyric and marker events whose content is a
/// chord symbol (`"G:maj"`) are read as chord changes.
pub fn parse_smf(bytes: &[u8]) -> Result<Song, IngestError> {
    let mut r = Reader::new(bytes);
    if r.remaining() < 4 || &bytes[..4] != b"MThd" {
        return Err(SmfError::BadMagic.into());
    }
    r.take(4, "header")?;
    let header_len = r.u32("header")? as usize;
    let header = r.take(header_len, "header chunk")?;
    if header_len < 6 {
        return Err(SmfError::Truncated("header chunk".into()).into());
    }
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]) as usize;
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(SmfError::UnsupportedFormat(format).into());
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(SmfError::SmpteDivision.into());
    }

    let mut tracks = Vec::with_capacity(ntracks);
    while tracks.len() < ntracks {
        if r.remaining() == 0 {
            return Err(SmfError::Truncated(format!("file: expected {ntracks} tracks, found {}", tracks.len())).into());
        }
        let id = r.take(4, "chunk id")?;
        let len = r.u32("chunk length")? as usize;
        let body = r.take(len, &format!("chunk {} ({len} bytes declared)", tracks.len()))?;
        if id == b"MTrk" {
            tracks.push(parse_track(body, tracks.len())?);
        }
    }

    let earliest = |f: &dyn Fn(&TrackData) -> Option<u64>| {
        (0..tracks.len())
            .filter_map(|i| f(&tracks[i]).map(|t| (t, i)))
            .min()
            .map(|(_, i)| i)
    };
    let (num, den) = earliest(&|t| t.time_signature.map(|s| s.0))
        .and_then(|i| tracks[i].time_signature)
        .map(|(_, n, d)| (n, d))
        .unwrap_or((4, 4));
    let key_sig = earliest(&|t| t.key_signature.map(|s| s.0)).and_then(|i| tracks[i].key_signature.map(|k| k.1));
    let tempo = earliest(&|t| t.tempo.map(|s| s.0)).and_then(|i| tracks[i].tempo.map(|k| k.1));

    let melody_track = {
        let with_notes = || tracks.iter().enumerate().filter(|(_, t)| !t.notes.is_empty());
        let pick = |it: &mut dyn Iterator<Item = (usize, &TrackData)>| {
            // most notes, earliest track on ties
            it.fold(None::<(usize, usize)>, |best, (i, t)| match best {
                Some((_, n)) if n >= t.notes.len() => best,
                _ => Some((i, t.notes.len())),
            })
        };
        pick(&mut with_notes().filter(|(_, t)| !has_simultaneous_onsets(&t.notes)))
            .or_else(|| pick(&mut with_notes()))
            .map(|(i, _)| i)
            .ok_or(SmfError::NoNotes)?
    };

    // ticks -> beats of the time-signature denominator
    let to_beats = |tick: u64| Beats::new(tick as i64 * den as i64, division as i64 * 4);
    let raw = make_monophonic(&tracks[melody_track].notes);
    let notes: Vec<MelodyNote> = raw
        .iter()
        .map(|n| MelodyNote::new(n.pitch, to_beats(n.start), to_beats(n.end) - to_beats(n.start)))
        .collect();

    let mut chord_events: Vec<(u64, ChordSymbol)> = tracks.iter().flat_map(|t| t.chords.iter().copied()).collect();
    chord_events.sort_by_key(|c| c.0);

    let note_end = notes.iter().map(|n| n.end()).max().unwrap_or_else(Beats::zero);
    let chord_end = chord_events.last().map(|c| to_beats(c.0)).unwrap_or_else(Beats::zero);
    let mut num_bars = bars_covering(note_end, num);
    if chord_end >= Beats::from_integer(num_bars as i64 * num as i64) {
        // a chord change on the final barline opens one more bar
        num_bars = (chord_end / Beats::from_integer(num as i64)).floor().to_integer() as u32 + 1;
    }
    let total = Beats::from_integer(num_bars as i64 * num as i64);

    let mut timed: Vec<TimedChord> = chord_events
        .iter()
        .enumerate()
        .map(|(i, &(tick, symbol))| {
            let start = to_beats(tick);
            let end = chord_events.get(i + 1).map(|c| to_beats(c.0)).unwrap_or(total);
            TimedChord { symbol, start, duration: end - start, path: format!("chord event {i}") }
        })
        .filter(|c| !c.duration.is_zero())
        .collect();
    let chords = grid_from_timed_chords(&mut timed, total)?;

    let key = match key_sig {
        Some(k) => k,
        None => detect_key(&notes)?,
    };
    let melody = MelodySegment::new(notes, key, num, num_bars, default_phrase_boundaries(num_bars))?;

    let mut metadata = BTreeMap::new();
    metadata.insert("source".into(), "smf".into());
    metadata.insert("time_signature".into(), format!("{num}/{den}"));
    metadata.insert("melody_track".into(), melody_track.to_string());
    if let Some(name) = &tracks[melody_track].name {
        metadata.insert("track_name".into(), name.clone());
    }
    if let Some(us) = tempo {
        metadata.insert("tempo_us_per_quarter".into(), us.to_string());
    }
    Ok(Song {
        id: tracks[melody_track].name.clone().unwrap_or_else(|| "smf".into()),
        melody,
        chords,
        metadata,
    })
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

fn track_chunk(mut events: Vec<(u64, u8, Vec<u8>)>) -> Vec<u8> {
    // (tick, order, bytes); order puts note-offs before note-ons at equal ticks
    events.sort_by_key(|a| (a.0, a.1));
    let mut body = Vec::new();
    let mut now = 0;
    for (tick, _, bytes) in events {
        push_vlq(&mut body, (tick - now) as u32);
        body.extend_from_slice(&bytes);
        now = tick;
    }
    body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
    let mut chunk = b"MTrk".to_vec();
    chunk.extend_from_slice(&(body.len() as u32).to_be_bytes());
    chunk.extend_from_slice(&body);
    chunk
}

fn meta(kind: u8, data: &[u8]) -> Vec<u8> {
    let mut v = vec![0xff, kind];
    push_vlq(&mut v, data.len() as u32);
    v.extend_from_slice(data);
    v
}

/// Writes a format-1 file: a conductor track (tempo, meter, key, chord
/// markers), the melody on track 1 and root-position triads on track 2.
/// Beats are written as quarter notes; times are rounded to the tick grid.
pub fn write_smf(song: &Song, division: u16) -> Vec<u8> {
    let tick = |b: Beats| -> u64 { (b * Beats::from_integer(division as i64)).round().to_u64().unwrap_or(0) };
    let melody = &song.melody;

    let mut conductor = vec![
        (0, 0, meta(0x51, &[0x07, 0xa1, 0x20])),
        (0, 0, meta(0x58, &[melody.beats_per_bar().min(255) as u8, 2, 24, 8])),
    ];
    let (sf, mi) = signature_from_key(melody.key());
    conductor.push((0, 0, meta(0x59, &[sf as u8, mi])));

    let mut melody_events = vec![(0, 0, meta(0x03, song.id.as_bytes()))];
    for n in melody.notes() {
        melody_events.push((tick(n.onset), 2, vec![0x90, n.pitch, 96]));
        melody_events.push((tick(n.end()), 1, vec![0x80, n.pitch, 0]));
    }

    let mut chord_events = vec![(0, 0, meta(0x03, b"chords"))];
    if let Some(chords) = &song.chords {
        let mut prev: Option<ChordSymbol> = None;
        for (i, c) in chords.slots().iter().enumerate() {
            let (start, end) = (tick(chords.slot_start(i)), tick(chords.slot_end(i)));
            if prev != Some(*c) {
                conductor.push((start, 1, meta(0x06, c.to_string().as_bytes())));
            }
            prev = Some(*c);
            // root position, root in the octave below middle C
            for iv in c.quality.intervals() {
                let p = 48 + c.root.value() + iv;
                chord_events.push((start, 2, vec![0x91, p, 72]));
                chord_events.push((end, 1, vec![0x81, p, 0]));
            }
        }
    }

    let mut out = b"MThd".to_vec();
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&3u16.to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    out.extend(track_chunk(conductor));
    out.extend(track_chunk(melody_events));
    out.extend(track_chunk(chord_events));
    out
}
