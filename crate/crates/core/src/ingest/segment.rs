use num_traits::Zero;

use super::{gcd_beats, IngestError, Song};
use crate::music::{default_phrase_boundaries, Beats, ChordProgression, MelodyNote, MelodySegment};

pub const DEFAULT_WINDOW_BARS: u32 = 16;
pub const DEFAULT_HOP_BARS: u32 = 8;
/// Shortest window worth keeping.
pub const MIN_SEGMENT_BARS: u32 = 4;

/// Where a segment came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentSource {
    pub song_id: String,
    pub start_bar: u32,
}

impl SegmentSource {
    pub fn new(song_id: impl Into<String>, start_bar: u32) -> Self {
        SegmentSource {
            song_id: song_id.into(),
            start_bar,
        }
    }
}

impl std::fmt::Display for SegmentSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.song_id, self.start_bar)
    }
}

/// A melody window with the chords over the same bars.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedPair {
    pub melody: MelodySegment,
    pub chords: ChordProgression,
    pub source: SegmentSource,
}

fn window(song: &Song, chords: &ChordProgression, start_bar: u32, bars: u32) -> Result<SegmentedPair, IngestError> {
    let m = &song.melody;
    let bar = m.bar_length();
    let start = bar * Beats::from_integer(start_bar as i64);
    let end = bar * Beats::from_integer((start_bar + bars) as i64);

    let notes = m
        .notes_in(start, end)
        .map(|(n, d)| MelodyNote::new(n.pitch, n.onset.max(start) - start, d))
        .collect();
    // only the two ends means the song is unannotated
    let song_phrases = match m.phrase_boundaries() {
        [_, _] => default_phrase_boundaries(m.num_bars()),
        b => b.to_vec(),
    };
    let phrases = song_phrases
        .iter()
        .filter(|&&b| b > start_bar && b < start_bar + bars)
        .map(|&b| b - start_bar)
        .collect();
    let melody = MelodySegment::new(notes, m.key(), m.beats_per_bar(), bars, phrases)?;

    // the song grid may not fall on the window start, so resample on a grid
    // that does
    let step = gcd_beats(chords.slot_duration(), bar);
    let n = ((end - start) / step).to_integer() as usize;
    let slots = (0..n)
        .map(|i| {
            let t = start + step * Beats::from_integer(i as i64);
            let idx = chords.slot_at(t).unwrap_or(chords.len() - 1);
            chords.slots()[idx]
        })
        .collect();
    let chords = ChordProgression::new(slots, step, Beats::zero())?;
    Ok(SegmentedPair {
        melody,
        chords,
        source: SegmentSource::new(song.id.clone(), start_bar),
    })
}

/// Slides a `window_bars` window with stride `hop_bars` over a chord-annotated
/// song.
///
/// Windowing stops once a window reaches the last bar. A trailing window
/// shorter than `window_bars` is kept only if it spans at least
/// [`MIN_SEGMENT_BARS`] bars and contains a note. Songs shorter than
/// [`MIN_SEGMENT_BARS`] produce nothing.
pub fn segment(song: &Song, window_bars: u32, hop_bars: u32) -> Result<Vec<SegmentedPair>, IngestError> {
    if window_bars < MIN_SEGMENT_BARS || hop_bars == 0 || hop_bars > window_bars {
        return Err(IngestError::BadWindow {
            window: window_bars,
            hop: hop_bars,
        });
    }
    let chords = song
        .chords
        .as_ref()
        .ok_or_else(|| IngestError::MissingChords(song.id.clone()))?;
    let total = song.melody.num_bars();
    let mut out = Vec::new();
    if total < MIN_SEGMENT_BARS {
        return Ok(out);
    }
    let mut start = 0;
    while start < total {
        let bars = window_bars.min(total - start);
        if bars == window_bars {
            out.push(window(song, chords, start, bars)?);
        } else {
            let pair = window(song, chords, start, bars)?;
            if bars >= MIN_SEGMENT_BARS && !pair.melody.is_empty() {
                out.push(pair);
            }
        }
        if start + bars >= total {
            break;
        }
        start += hop_bars;
    }
    Ok(out)
}
