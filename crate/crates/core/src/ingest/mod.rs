//! Corpus ingestion: Standard MIDI Files, the JSON corpus format, key
//! detection and fixed-window segmentation into memory units.

mod corpus;
mod key;
mod segment;
mod smf;

use std::collections::BTreeMap;

use num_integer::Integer;
use num_traits::Zero;
use thiserror::Error;

use crate::music::{Beats, ChordProgression, ChordSymbol, MelodySegment, MusicError};

pub use corpus::{parse_corpus_json, parse_song_value, song_to_value, songs_to_corpus_json};
pub use key::{detect_key, pitch_class_histogram, KeyError, MAJOR_PROFILE, MINOR_PROFILE};
pub use segment::{segment, SegmentedPair, SegmentSource, DEFAULT_HOP_BARS, DEFAULT_WINDOW_BARS, MIN_SEGMENT_BARS};
pub use smf::{parse_smf, write_smf, SmfError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Smf(#[from] SmfError),
    #[error("corpus schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unknown chord symbol {symbol:?} at {path}")]
    UnknownChord { path: String, symbol: String },
    #[error("overlapping chord slots at {path}: starts at {start} before previous chord ends at {prev_end}")]
    OverlappingChords { path: String, start: String, prev_end: String },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("song {0:?} has no chord annotations")]
    MissingChords(String),
    #[error("invalid segmentation parameters: window {window}, hop {hop}")]
    BadWindow { window: u32, hop: u32 },
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Music(#[from] MusicError),
}

/// A full-length melody with its chord annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub id: String,
    pub melody: MelodySegment,
    /// `None` for melody-only inputs (e.g. a query or an unannotated MIDI file).
    pub chords: Option<ChordProgression>,
    pub metadata: BTreeMap<String, String>,
}

/// A chord with explicit timing, before it is put on a slot grid.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TimedChord {
    pub symbol: ChordSymbol,
    pub start: Beats,
    pub duration: Beats,
    /// Location for error messages.
    pub path: String,
}

pub(crate) fn gcd_beats(a: Beats, b: Beats) -> Beats {
    if a.is_zero() {
        return b;
    }
    if b.is_zero() {
        return a;
    }
    let num = (a.numer() * b.denom()).gcd(&(b.numer() * a.denom()));
    Beats::new(num, a.denom() * b.denom())
}

/// Puts timed chords on the coarsest uniform grid that represents every
/// boundary exactly and spans `[0, total)`.
///
/// Gaps are filled by holding the previous chord; time before the first
/// chord takes the first chord; the last chord is held to `total`.
pub(crate) fn grid_from_timed_chords(
    chords: &mut [TimedChord],
    total: Beats,
) -> Result<Option<ChordProgression>, IngestError> {
    if chords.is_empty() {
        return Ok(None);
    }
    chords.sort_by_key(|a| a.start);
    let mut prev_end = Beats::zero();
    let mut step = total;
    for (i, c) in chords.iter().enumerate() {
        if i > 0 && c.start < prev_end {
            return Err(IngestError::OverlappingChords {
                path: c.path.clone(),
                start: crate::music::format_beats(c.start),
                prev_end: crate::music::format_beats(prev_end),
            });
        }
        prev_end = c.start + c.duration;
        step = gcd_beats(step, c.start);
        step = gcd_beats(step, c.duration);
    }
    let n = (total / step).to_integer() as usize;
    let mut slots = Vec::with_capacity(n);
    let mut current = 0;
    for i in 0..n {
        let t = step * Beats::from_integer(i as i64);
        while current + 1 < chords.len() && chords[current + 1].start <= t {
            current += 1;
        }
        slots.push(chords[current].symbol);
    }
    Ok(Some(ChordProgression::new(slots, step, Beats::zero())?))
}

/// Smallest bar count covering `end`, at least 1.
pub(crate) fn bars_covering(end: Beats, beats_per_bar: u32) -> u32 {
    let bars = (end / Beats::from_integer(beats_per_bar as i64)).ceil().to_integer();
    bars.max(1) as u32
}
