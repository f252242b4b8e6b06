//! Minimal-modification projection of a retrieved progression onto the
//! feasible set.
//!
//! The edited progression minimizes, over every labelling of the retrieved
//! slot grid with chords from the 48-triad vocabulary,
//!
//! ```text
//! d(C, Cr) = sum_t  w_sub * [C_t != Cr_t]
//!                 + w_tonal * tonal(C_t, melody in slot t)
//!                 + w_cad * cadence_t(C)
//!          + sum_t  w_reg * transition(C_{t-1}, C_t)
//! ```
//!
//! subject to a per-slot mask that excludes chords with (almost) no chord
//! tones under the melody. Every term depends on at most two neighbouring
//! slots, so the minimizer is found exactly by a Viterbi pass over 48 states.

use std::ops::Range;

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::music::{roman_degree, Beats, ChordProgression, ChordSymbol, Key, MelodySegment, PitchClass, VOCAB_SIZE};

/// Cadence cost of a phrase that does not start on the tonic.
pub const NON_TONIC_START: f64 = 0.5;
/// Phrase ending on V -> I.
pub const AUTHENTIC_END: f64 = 0.0;
/// Phrase ending on I or V without the authentic pair.
pub const STABLE_END: f64 = 0.25;
/// Any other phrase ending.
pub const OPEN_END: f64 = 0.75;

const DESCENDING_FIFTH: f64 = 0.0;
const DIATONIC_STEP: f64 = 0.1;
const ONE_CHROMATIC: f64 = 0.4;
const BOTH_CHROMATIC: f64 = 0.8;
const REPEAT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("invalid edit config: {0}")]
    InvalidConfig(String),
    #[error("retrieved grid spans {grid} beats from beat {start}; melody needs {melody} beats from 0")]
    GridMismatch { grid: String, start: String, melody: String },
    #[error("empty chord vocabulary")]
    EmptyVocabulary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub w_sub: f64,
    pub w_tonal: f64,
    pub w_cad: f64,
    pub w_reg: f64,
    /// Dissonance tolerance in [0, 1]; scales down the chromatic transition surcharges.
    pub style: f64,
    /// A chord is infeasible in a sounding slot when its tonal cost exceeds this.
    pub tonal_hard_threshold: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            w_sub: 1.0,
            w_tonal: 2.0,
            w_cad: 1.0,
            w_reg: 1.0,
            style: 0.3,
            tonal_hard_threshold: 0.999,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<(), EditError> {
        for (name, w) in [
            ("w_sub", self.w_sub),
            ("w_tonal", self.w_tonal),
            ("w_cad", self.w_cad),
            ("w_reg", self.w_reg),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(EditError::InvalidConfig(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.style) {
            return Err(EditError::InvalidConfig(format!("style = {} must be in [0, 1]", self.style)));
        }
        if !(self.tonal_hard_threshold > 0.0 && self.tonal_hard_threshold <= 1.0) {
            return Err(EditError::InvalidConfig(format!(
                "tonal_hard_threshold = {} must be in (0, 1]",
                self.tonal_hard_threshold
            )));
        }
        Ok(())
    }
}

/// Weighted cost terms charged to one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotCosts {
    pub substitution: f64,
    pub tonal: f64,
    pub cadence: f64,
    /// Transition from the previous slot into this one (0 for slot 0).
    pub regularization: f64,
}

impl SlotCosts {
    pub fn total(&self) -> f64 {
        self.substitution + self.tonal + self.cadence + self.regularization
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub chords: ChordProgression,
    pub cost: f64,
    pub breakdown: Vec<SlotCosts>,
    pub changed_slots: Vec<usize>,
    /// Slots where every chord was masked and the mask was lifted.
    pub relaxed_slots: Vec<usize>,
}

/// Melody content sounding in one slot: exact duration per pitch class.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotMelody {
    pub pc_beats: [Beats; 12],
    pub total: Beats,
}

impl SlotMelody {
    pub fn empty() -> Self {
        SlotMelody {
            pc_beats: [Beats::zero(); 12],
            total: Beats::zero(),
        }
    }

    pub fn add(&mut self, pc: PitchClass, duration: Beats) {
        self.pc_beats[pc.index()] += duration;
        self.total += duration;
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_zero()
    }
}

/// Melody content of every slot of `grid`.
pub fn slot_melodies(grid: &ChordProgression, melody: &MelodySegment) -> Vec<SlotMelody> {
    (0..grid.len())
        .map(|t| {
            let mut s = SlotMelody::empty();
            for (n, d) in melody.notes_in(grid.slot_start(t), grid.slot_end(t)) {
                s.add(n.pitch_class(), d);
            }
            s
        })
        .collect()
}

/// Fraction of sounding slot time whose pitch class is not a chord tone.
pub fn tonal_alignment_cost(chord: ChordSymbol, slot: &SlotMelody) -> f64 {
    if slot.is_empty() {
        return 0.0;
    }
    let off: Beats = (0..12)
        .filter(|&pc| !chord.contains(PitchClass::new(pc)))
        .map(|pc| slot.pc_beats[pc as usize])
        .sum();
    (off / slot.total).to_f64().unwrap_or(1.0)
}

/// Rule-based cost of moving from `prev` to `next` in `key`.
pub fn transition_cost(prev: ChordSymbol, next: ChordSymbol, key: Key, style: f64) -> f64 {
    let dp = roman_degree(prev, key).is_some();
    let dn = roman_degree(next, key).is_some();
    let base = match (dp, dn) {
        (true, true) if next.root.interval_from(prev.root) == 5 => DESCENDING_FIFTH,
        (true, true) => DIATONIC_STEP,
        (true, false) | (false, true) => ONE_CHROMATIC * (1.0 - style),
        (false, false) => BOTH_CHROMATIC * (1.0 - style),
    };
    if prev == next {
        base + REPEAT
    } else {
        base
    }
}

fn is_tonic(c: ChordSymbol, key: Key) -> bool {
    roman_degree(c, key).is_some_and(|d| d.is_tonic())
}

fn is_dominant(c: ChordSymbol, key: Key) -> bool {
    roman_degree(c, key).is_some_and(|d| d.is_dominant())
}

fn start_cost(first: ChordSymbol, key: Key) -> f64 {
    if is_tonic(first, key) {
        0.0
    } else {
        NON_TONIC_START
    }
}

fn end_cost(prev: Option<ChordSymbol>, last: ChordSymbol, key: Key) -> f64 {
    let tonic = is_tonic(last, key);
    if tonic && prev.is_some_and(|p| is_dominant(p, key)) {
        AUTHENTIC_END
    } else if tonic || is_dominant(last, key) {
        STABLE_END
    } else {
        OPEN_END
    }
}

/// Slot ranges of each phrase. A slot belongs to the phrase its start falls
/// in; phrases too short to own a slot are skipped.
pub fn phrase_slots(grid: &ChordProgression, beats_per_bar: u32, phrase_boundaries: &[u32]) -> Vec<Range<usize>> {
    let bar = Beats::from_integer(beats_per_bar as i64);
    phrase_boundaries
        .windows(2)
        .filter_map(|w| {
            let lo = bar * Beats::from_integer(w[0] as i64);
            let hi = bar * Beats::from_integer(w[1] as i64);
            let slots: Vec<usize> = (0..grid.len())
                .filter(|&t| {
                    let s = grid.slot_start(t);
                    s >= lo && s < hi
                })
                .collect();
            Some(*slots.first()?..*slots.last()? + 1)
        })
        .collect()
}

/// Unweighted cadence cost per slot: the first slot of each phrase pays for
/// a non-tonic start, the last slot for a weak ending.
pub fn cadence_cost(
    progression: &ChordProgression,
    key: Key,
    beats_per_bar: u32,
    phrase_boundaries: &[u32],
) -> Vec<f64> {
    let c = progression.slots();
    let mut out = vec![0.0; c.len()];
    for r in phrase_slots(progression, beats_per_bar, phrase_boundaries) {
        out[r.start] += start_cost(c[r.start], key);
        let last = r.end - 1;
        let prev = (r.len() >= 2).then(|| c[last - 1]);
        out[last] += end_cost(prev, c[last], key);
    }
    out
}

/// Per-slot weighted costs of labelling the grid with `chords`.
pub fn cost_breakdown(
    chords: &ChordProgression,
    retrieved: &ChordProgression,
    melody: &MelodySegment,
    config: &EditConfig,
) -> Vec<SlotCosts> {
    let slots = slot_melodies(chords, melody);
    let key = melody.key();
    let cad = cadence_cost(chords, key, melody.beats_per_bar(), melody.phrase_boundaries());
    let c = chords.slots();
    (0..c.len())
        .map(|t| SlotCosts {
            substitution: if c[t] != retrieved.slots()[t] { config.w_sub } else { 0.0 },
            tonal: config.w_tonal * tonal_alignment_cost(c[t], &slots[t]),
            cadence: config.w_cad * cad[t],
            regularization: if t == 0 {
                0.0
            } else {
                config.w_reg * transition_cost(c[t - 1], c[t], key, config.style)
            },
        })
        .collect()
}

fn check_grid(retrieved: &ChordProgression, melody: &MelodySegment) -> Result<(), EditError> {
    if !retrieved.start_beat().is_zero() || retrieved.end_beat() < melody.total_beats() {
        return Err(EditError::GridMismatch {
            grid: crate::music::format_beats(retrieved.end_beat() - retrieved.start_beat()),
            start: crate::music::format_beats(retrieved.start_beat()),
            melody: crate::music::format_beats(melody.total_beats()),
        });
    }
    Ok(())
}

/// Projects `retrieved` onto the feasible set over the full vocabulary.
pub fn edit(retrieved: &ChordProgression, melody: &MelodySegment, config: &EditConfig) -> Result<EditResult, EditError> {
    let vocab: Vec<ChordSymbol> = ChordSymbol::vocabulary().collect();
    edit_with_vocabulary(retrieved, melody, config, &vocab)
}

/// As [`edit`], with the search restricted to `vocabulary`.
pub fn edit_with_vocabulary(
    retrieved: &ChordProgression,
    melody: &MelodySegment,
    config: &EditConfig,
    vocabulary: &[ChordSymbol],
) -> Result<EditResult, EditError> {
    config.validate()?;
    check_grid(retrieved, melody)?;
    let mut vocab = vocabulary.to_vec();
    vocab.sort_by_key(|c| c.index());
    vocab.dedup();
    if vocab.is_empty() {
        return Err(EditError::EmptyVocabulary);
    }

    let key = melody.key();
    let n = retrieved.len();
    let v = vocab.len();
    let slots = slot_melodies(retrieved, melody);
    let phrases = phrase_slots(retrieved, melody.beats_per_bar(), melody.phrase_boundaries());

    let mut first = vec![false; n];
    // Some(true): last slot of a phrase with >= 2 slots (pairwise cadence);
    // Some(false): sole slot of a one-slot phrase
    let mut last: Vec<Option<bool>> = vec![None; n];
    for r in &phrases {
        first[r.start] = true;
        last[r.end - 1] = Some(r.len() >= 2);
    }

    let mut trans = vec![0.0; VOCAB_SIZE * VOCAB_SIZE];
    for &p in &vocab {
        for &c in &vocab {
            trans[p.index() * VOCAB_SIZE + c.index()] = config.w_reg * transition_cost(p, c, key, config.style);
        }
    }

    let mut relaxed_slots = Vec::new();
    let mut unary = vec![f64::INFINITY; n * v];
    for t in 0..n {
        let tonal: Vec<f64> = vocab.iter().map(|&c| tonal_alignment_cost(c, &slots[t])).collect();
        let masked = |j: usize| !slots[t].is_empty() && tonal[j] > config.tonal_hard_threshold;
        let relax = (0..v).all(masked);
        if relax {
            relaxed_slots.push(t);
        }
        for (j, &c) in vocab.iter().enumerate() {
            if !relax && masked(j) {
                continue;
            }
            let mut u = config.w_tonal * tonal[j];
            if c != retrieved.slots()[t] {
                u += config.w_sub;
            }
            if first[t] {
                u += config.w_cad * start_cost(c, key);
            }
            if last[t] == Some(false) {
                u += config.w_cad * end_cost(None, c, key);
            }
            unary[t * v + j] = u;
        }
    }

    let mut score = unary[..v].to_vec();
    let mut back = vec![0usize; n * v];
    for t in 1..n {
        let cadence_pair = last[t] == Some(true);
        let mut next = vec![f64::INFINITY; v];
        for (j, &c) in vocab.iter().enumerate() {
            let u = unary[t * v + j];
            if u.is_infinite() {
                continue;
            }
            let mut best = (f64::INFINITY, 0);
            for (i, &p) in vocab.iter().enumerate() {
                if score[i].is_infinite() {
                    continue;
                }
                let mut s = score[i] + trans[p.index() * VOCAB_SIZE + c.index()];
                if cadence_pair {
                    s += config.w_cad * end_cost(Some(p), c, key);
                }
                // strict comparison keeps the lowest chord index on ties
                if s < best.0 {
                    best = (s, i);
                }
            }
            next[j] = best.0 + u;
            back[t * v + j] = best.1;
        }
        score = next;
    }

    let mut end = 0;
    for j in 1..v {
        if score[j] < score[end] {
            end = j;
        }
    }
    let mut path = vec![0usize; n];
    path[n - 1] = end;
    for t in (1..n).rev() {
        path[t - 1] = back[t * v + path[t]];
    }
    let labels: Vec<ChordSymbol> = path.iter().map(|&j| vocab[j]).collect();
    let chords = retrieved
        .with_slots(labels)
        .expect("path has one label per slot");

    let breakdown = cost_breakdown(&chords, retrieved, melody, config);
    let cost = breakdown.iter().map(SlotCosts::total).sum();
    let changed_slots = (0..n)
        .filter(|&t| chords.slots()[t] != retrieved.slots()[t])
        .collect();
    Ok(EditResult {
        chords,
        cost,
        breakdown,
        changed_slots,
        relaxed_slots,
    })
}
