//! Symbolic music types shared by every stage of the engine: pitch classes,
//! keys, the 48-chord triad vocabulary, melodies and chord progressions on a
//! slot grid.
//!
//! Beat positions are exact rationals so slot boundaries and note overlaps
//! can be compared without rounding. Floating point appears only downstream
//! (embeddings, costs, scores).

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Beat positions and durations.
pub type Beats = Rational64;

/// Number of chord categories in the vocabulary (12 roots x 4 triad qualities).
pub const VOCAB_SIZE: usize = 48;

const NOTE_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MusicError {
    #[error("unknown chord symbol {0:?}")]
    UnknownChord(String),
    #[error("pitch {0} outside MIDI range 0..=127")]
    PitchOutOfRange(i32),
    #[error("invalid melody segment: {0}")]
    InvalidSegment(String),
    #[error("invalid chord progression: {0}")]
    InvalidProgression(String),
}

/// A pitch modulo the octave, 0 = C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PitchClass(u8);

impl PitchClass {
    /// Reduces any integer to its pitch class.
    pub fn new(value: i32) -> Self {
        PitchClass(value.rem_euclid(12) as u8)
    }

    pub fn from_midi(pitch: u8) -> Self {
        PitchClass(pitch % 12)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Self::new(self.0 as i32 + semitones)
    }

    /// Upward distance in semitones from `other` to `self`, in 0..12.
    pub fn interval_from(self, other: PitchClass) -> u8 {
        (self.0 + 12 - other.0) % 12
    }

    pub fn name(self) -> &'static str {
        NOTE_NAMES[self.index()]
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

const MAJOR_STEPS: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const NATURAL_MINOR_STEPS: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

const MAJOR_TRIADS: [ChordQuality; 7] = [
    ChordQuality::Major,
    ChordQuality::Minor,
    ChordQuality::Minor,
    ChordQuality::Major,
    ChordQuality::Major,
    ChordQuality::Minor,
    ChordQuality::Diminished,
];
const NATURAL_MINOR_TRIADS: [ChordQuality; 7] = [
    ChordQuality::Minor,
    ChordQuality::Diminished,
    ChordQuality::Major,
    ChordQuality::Minor,
    ChordQuality::Minor,
    ChordQuality::Major,
    ChordQuality::Major,
];

impl Mode {
    /// Scale steps above the tonic (natural minor for `Minor`).
    pub fn scale_steps(self) -> [u8; 7] {
        match self {
            Mode::Major => MAJOR_STEPS,
            Mode::Minor => NATURAL_MINOR_STEPS,
        }
    }

    /// Triad quality built on each scale degree.
    pub fn diatonic_triads(self) -> [ChordQuality; 7] {
        match self {
            Mode::Major => MAJOR_TRIADS,
            Mode::Minor => NATURAL_MINOR_TRIADS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Major => "major",
            Mode::Minor => "minor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Key {
    pub tonic: PitchClass,
    pub mode: Mode,
}

impl Key {
    pub fn new(tonic: PitchClass, mode: Mode) -> Self {
        Key { tonic, mode }
    }

    pub fn major(tonic: i32) -> Self {
        Key::new(PitchClass::new(tonic), Mode::Major)
    }

    pub fn minor(tonic: i32) -> Self {
        Key::new(PitchClass::new(tonic), Mode::Minor)
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Key::new(self.tonic.transpose(semitones), self.mode)
    }

    /// Pitch classes of the key's (natural) scale.
    pub fn scale(self) -> [PitchClass; 7] {
        self.mode
            .scale_steps()
            .map(|s| self.tonic.transpose(s as i32))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.tonic, self.mode.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChordQuality {
    Major,
    Minor,
    Diminished,
    Augmented,
}

impl ChordQuality {
    pub const ALL: [ChordQuality; 4] = [
        ChordQuality::Major,
        ChordQuality::Minor,
        ChordQuality::Diminished,
        ChordQuality::Augmented,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Third and fifth above the root.
    pub fn intervals(self) -> [u8; 3] {
        match self {
            ChordQuality::Major => [0, 4, 7],
            ChordQuality::Minor => [0, 3, 7],
            ChordQuality::Diminished => [0, 3, 6],
            ChordQuality::Augmented => [0, 4, 8],
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            ChordQuality::Major => "maj",
            ChordQuality::Minor => "min",
            ChordQuality::Diminished => "dim",
            ChordQuality::Augmented => "aug",
        }
    }
}

/// One of the 48 triads, `index = root * 4 + quality ordinal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChordSymbol {
    pub root: PitchClass,
    pub quality: ChordQuality,
}

impl ChordSymbol {
    pub fn new(root: PitchClass, quality: ChordQuality) -> Self {
        ChordSymbol { root, quality }
    }

    pub fn index(self) -> usize {
        self.root.index() * 4 + self.quality.ordinal()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= VOCAB_SIZE {
            return None;
        }
        Some(ChordSymbol {
            root: PitchClass((index / 4) as u8),
            quality: ChordQuality::ALL[index % 4],
        })
    }

    /// All 48 chords in index order.
    pub fn vocabulary() -> impl Iterator<Item = ChordSymbol> {
        (0..VOCAB_SIZE).filter_map(ChordSymbol::from_index)
    }

    pub fn pitch_classes(self) -> [PitchClass; 3] {
        self.quality
            .intervals()
            .map(|i| self.root.transpose(i as i32))
    }

    pub fn contains(self, pc: PitchClass) -> bool {
        let iv = pc.interval_from(self.root);
        self.quality.intervals().contains(&iv)
    }

    pub fn transpose(self, semitones: i32) -> Self {
        ChordSymbol::new(self.root.transpose(semitones), self.quality)
    }
}

/// Pitch classes of a triad: root, third and fifth.
pub fn chord_pitch_classes(chord: ChordSymbol) -> [PitchClass; 3] {
    chord.pitch_classes()
}

impl fmt::Display for ChordSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.root, self.quality.suffix())
    }
}

impl FromStr for ChordSymbol {
    type Err = MusicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MusicError::UnknownChord(s.to_string());
        let (root, quality) = s.split_once(':').ok_or_else(err)?;
        let root = NOTE_NAMES
            .iter()
            .position(|n| *n == root)
            .ok_or_else(err)?;
        let quality = ChordQuality::ALL
            .into_iter()
            .find(|q| q.suffix() == quality)
            .ok_or_else(err)?;
        Ok(ChordSymbol::new(PitchClass(root as u8), quality))
    }
}

impl Serialize for ChordSymbol {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChordSymbol {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A diatonic scale degree (1..=7) together with the triad quality found on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RomanDegree {
    pub degree: u8,
    pub quality: ChordQuality,
}

impl RomanDegree {
    pub fn is_tonic(self) -> bool {
        self.degree == 1
    }

    pub fn is_dominant(self) -> bool {
        self.degree == 5
    }
}

impl fmt::Display for RomanDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const UPPER: [&str; 7] = ["I", "II", "III", "IV", "V", "VI", "VII"];
        let numeral = UPPER[(self.degree - 1) as usize];
        match self.quality {
            ChordQuality::Major => f.write_str(numeral),
            ChordQuality::Minor => f.write_str(&numeral.to_lowercase()),
            ChordQuality::Diminished => write!(f, "{}°", numeral.to_lowercase()),
            ChordQuality::Augmented => write!(f, "{numeral}+"),
        }
    }
}

/// Diatonic degree of `chord` in `key`, or `None` when the root is off-scale
/// or the quality differs from the scale's triad on that degree.
///
/// Minor keys use natural minor, except that a major triad on degree 5 is
/// also accepted (the harmonic-minor dominant).
pub fn roman_degree(chord: ChordSymbol, key: Key) -> Option<RomanDegree> {
    let step = chord.root.interval_from(key.tonic);
    let pos = key.mode.scale_steps().iter().position(|&s| s == step)?;
    let expected = key.mode.diatonic_triads()[pos];
    let degree = pos as u8 + 1;
    let matches = chord.quality == expected
        || (key.mode == Mode::Minor && degree == 5 && chord.quality == ChordQuality::Major);
    matches.then_some(RomanDegree {
        degree,
        quality: chord.quality,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MelodyNote {
    pub pitch: u8,
    pub onset: Beats,
    pub duration: Beats,
}

impl MelodyNote {
    pub fn new(pitch: u8, onset: Beats, duration: Beats) -> Self {
        MelodyNote {
            pitch,
            onset,
            duration,
        }
    }

    pub fn end(&self) -> Beats {
        self.onset + self.duration
    }

    pub fn pitch_class(&self) -> PitchClass {
        PitchClass::from_midi(self.pitch)
    }

    /// Length of the intersection of this note with `[start, end)`.
    pub fn overlap(&self, start: Beats, end: Beats) -> Beats {
        let lo = self.onset.max(start);
        let hi = self.end().min(end);
        if hi > lo {
            hi - lo
        } else {
            Beats::zero()
        }
    }
}

/// A timed melody with its key, meter, bar count and phrase boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MelodySegment {
    notes: Vec<MelodyNote>,
    key: Key,
    beats_per_bar: u32,
    num_bars: u32,
    phrase_boundaries: Vec<u32>,
}

/// Phrase boundaries every four bars, including both ends.
pub fn default_phrase_boundaries(num_bars: u32) -> Vec<u32> {
    let mut b: Vec<u32> = (0..num_bars).step_by(4).collect();
    b.push(num_bars);
    b
}

impl MelodySegment {
    /// Validates and builds a segment. Notes are sorted by onset (then pitch);
    /// phrase boundaries are sorted, deduplicated and completed with 0 and
    /// `num_bars`.
    pub fn new(
        mut notes: Vec<MelodyNote>,
        key: Key,
        beats_per_bar: u32,
        num_bars: u32,
        phrase_boundaries: Vec<u32>,
    ) -> Result<Self, MusicError> {
        if beats_per_bar == 0 {
            return Err(MusicError::InvalidSegment("beats_per_bar must be positive".into()));
        }
        if num_bars == 0 {
            return Err(MusicError::InvalidSegment("num_bars must be positive".into()));
        }
        let total = Beats::from_integer(beats_per_bar as i64 * num_bars as i64);
        for (i, n) in notes.iter().enumerate() {
            if n.pitch > 127 {
                return Err(MusicError::PitchOutOfRange(n.pitch as i32));
            }
            if n.duration <= Beats::zero() {
                return Err(MusicError::InvalidSegment(format!(
                    "note {i} has non-positive duration {}",
                    n.duration
                )));
            }
            if n.onset < Beats::zero() || n.end() > total {
                return Err(MusicError::InvalidSegment(format!(
                    "note {i} [{}, {}) lies outside [0, {total})",
                    n.onset,
                    n.end()
                )));
            }
        }
        notes.sort_by(|a, b| a.onset.cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));

        let mut phrases = phrase_boundaries;
        if let Some(&bad) = phrases.iter().find(|&&b| b > num_bars) {
            return Err(MusicError::InvalidSegment(format!(
                "phrase boundary {bad} beyond {num_bars} bars"
            )));
        }
        phrases.push(0);
        phrases.push(num_bars);
        phrases.sort_unstable();
        phrases.dedup();

        Ok(MelodySegment {
            notes,
            key,
            beats_per_bar,
            num_bars,
            phrase_boundaries: phrases,
        })
    }

    pub fn notes(&self) -> &[MelodyNote] {
        &self.notes
    }

    pub fn key(&self) -> Key {
        self.key
    }

    pub fn with_key(mut self, key: Key) -> Self {
        self.key = key;
        self
    }

    pub fn beats_per_bar(&self) -> u32 {
        self.beats_per_bar
    }

    pub fn num_bars(&self) -> u32 {
        self.num_bars
    }

    pub fn phrase_boundaries(&self) -> &[u32] {
        &self.phrase_boundaries
    }

    pub fn bar_length(&self) -> Beats {
        Beats::from_integer(self.beats_per_bar as i64)
    }

    pub fn total_beats(&self) -> Beats {
        Beats::from_integer(self.beats_per_bar as i64 * self.num_bars as i64)
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Shifts every pitch and the key tonic; timing is untouched.
    pub fn transpose(&self, semitones: i32) -> Result<Self, MusicError> {
        let notes = self
            .notes
            .iter()
            .map(|n| {
                let p = n.pitch as i32 + semitones;
                if !(0..=127).contains(&p) {
                    return Err(MusicError::PitchOutOfRange(p));
                }
                Ok(MelodyNote::new(p as u8, n.onset, n.duration))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MelodySegment {
            notes,
            key: self.key.transpose(semitones),
            ..self.clone()
        })
    }

    /// Notes overlapping `[start, end)` paired with the overlap length.
    pub fn notes_in(&self, start: Beats, end: Beats) -> impl Iterator<Item = (&MelodyNote, Beats)> {
        self.notes
            .iter()
            .take_while(move |n| n.onset < end)
            .filter_map(move |n| {
                let d = n.overlap(start, end);
                (!d.is_zero()).then_some((n, d))
            })
    }
}

/// Transposes a melody segment by `semitones`; see [`MelodySegment::transpose`].
pub fn transpose_segment(segment: &MelodySegment, semitones: i32) -> Result<MelodySegment, MusicError> {
    segment.transpose(semitones)
}

/// Chords on a uniform slot grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChordProgression {
    slots: Vec<ChordSymbol>,
    slot_duration: Beats,
    start_beat: Beats,
}

impl ChordProgression {
    pub fn new(slots: Vec<ChordSymbol>, slot_duration: Beats, start_beat: Beats) -> Result<Self, MusicError> {
        if slots.is_empty() {
            return Err(MusicError::InvalidProgression("no slots".into()));
        }
        if slot_duration <= Beats::zero() {
            return Err(MusicError::InvalidProgression(format!(
                "slot duration {slot_duration} must be positive"
            )));
        }
        if start_beat < Beats::zero() {
            return Err(MusicError::InvalidProgression(format!(
                "start beat {start_beat} must be non-negative"
            )));
        }
        Ok(ChordProgression {
            slots,
            slot_duration,
            start_beat,
        })
    }

    /// Same grid, different labels.
    pub fn with_slots(&self, slots: Vec<ChordSymbol>) -> Result<Self, MusicError> {
        if slots.len() != self.slots.len() {
            return Err(MusicError::InvalidProgression(format!(
                "expected {} slots, got {}",
                self.slots.len(),
                slots.len()
            )));
        }
        Ok(ChordProgression {
            slots,
            ..self.clone()
        })
    }

    pub fn slots(&self) -> &[ChordSymbol] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot_duration(&self) -> Beats {
        self.slot_duration
    }

    pub fn start_beat(&self) -> Beats {
        self.start_beat
    }

    pub fn end_beat(&self) -> Beats {
        self.slot_start(self.slots.len())
    }

    pub fn slot_start(&self, slot: usize) -> Beats {
        self.start_beat + self.slot_duration * Beats::from_integer(slot as i64)
    }

    pub fn slot_end(&self, slot: usize) -> Beats {
        self.slot_start(slot + 1)
    }

    /// Slot sounding at `beat`, if inside the grid.
    pub fn slot_at(&self, beat: Beats) -> Option<usize> {
        if beat < self.start_beat {
            return None;
        }
        let idx = ((beat - self.start_beat) / self.slot_duration).floor().to_integer();
        usize::try_from(idx).ok().filter(|&i| i < self.slots.len())
    }

    /// Number of bars spanned, if the grid covers a whole number of them.
    pub fn bars(&self, beats_per_bar: u32) -> Option<u32> {
        let span = self.slot_duration * Beats::from_integer(self.slots.len() as i64);
        let bars = span / Beats::from_integer(beats_per_bar as i64);
        bars.is_integer().then(|| bars.to_integer() as u32)
    }

    pub fn transpose(&self, semitones: i32) -> Self {
        ChordProgression {
            slots: self.slots.iter().map(|c| c.transpose(semitones)).collect(),
            ..self.clone()
        }
    }

    /// `"C:maj F:maj ..."`.
    pub fn symbols(&self) -> Vec<String> {
        self.slots.iter().map(|c| c.to_string()).collect()
    }
}

impl fmt::Display for ChordProgression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.slots.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Renders a beat value as `"n"` or `"n/d"`.
pub fn format_beats(b: Beats) -> String {
    if b.is_integer() {
        b.to_integer().to_string()
    } else {
        format!("{}/{}", b.numer(), b.denom())
    }
}

/// Converts to `f64` for weighting.
pub fn beats_f64(b: Beats) -> f64 {
    b.to_f64().unwrap_or(0.0)
}
