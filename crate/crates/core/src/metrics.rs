//! Objective harmonization metrics.
//!
//! Diversity and transition structure: chord histogram entropy ([`che`]),
//! chord coverage ([`cc`]) and chord tonal distance ([`ctd`]). Melody/chord
//! compatibility: pitch consonance ([`pcs`]), melody-chord tonal distance
//! ([`mctd`]) and the chord-tone to non-chord-tone ratio ([`ctnctr`]).
//!
//! Melody notes are split at slot boundaries, so a note held across a chord
//! change is judged against each chord for the time it sounds under it.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::music::{Beats, ChordProgression, ChordSymbol, MelodySegment, PitchClass};

/// Radii of the fifths, minor-thirds and major-thirds circles.
pub const CENTROID_RADII: [f64; 3] = [1.0, 1.0, 0.5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("progression is empty")]
    EmptyProgression,
    #[error("chord tonal distance needs at least 2 slots, got {0}")]
    TooFewSlots(usize),
    #[error("melody has no notes under the progression")]
    EmptyMelody,
    #[error("pitch-class weights are all zero or negative")]
    BadWeights,
}

pub fn che(progression: &ChordProgression) -> Result<f64, MetricError> {
    let slots = progression.slots();
    if slots.is_empty() {
        return Err(MetricError::EmptyProgression);
    }
    let mut counts: BTreeMap<ChordSymbol, usize> = BTreeMap::new();
    for &c in slots {
        *counts.entry(c).or_default() += 1;
    }
    let n = slots.len() as f64;
    Ok(-counts
        .values()
        .map(|&k| {
            let p = k as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

pub fn cc(progression: &ChordProgression) -> Result<usize, MetricError> {
    if progression.slots().is_empty() {
        return Err(MetricError::EmptyProgression);
    }
    let mut seen = [false; crate::music::VOCAB_SIZE];
    for c in progression.slots() {
        seen[c.index()] = true;
    }
    Ok(seen.iter().filter(|&&s| s).count())
}

/// Weighted 6-D tonnetz centroid of a pitch-class distribution.
pub fn tonal_centroid(weights: &[f64; 12]) -> Result<[f64; 6], MetricError> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(MetricError::BadWeights);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::BadWeights);
    }
    let [r1, r2, r3] = CENTROID_RADII;
    let mut c = [0.0; 6];
    for (p, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let p = p as f64;
        let basis = [
            r1 * (7.0 * PI * p / 6.0).sin(),
            r1 * (7.0 * PI * p / 6.0).cos(),
            r2 * (3.0 * PI * p / 2.0).sin(),
            r2 * (3.0 * PI * p / 2.0).cos(),
            r3 * (2.0 * PI * p / 3.0).sin(),
            r3 * (2.0 * PI * p / 3.0).cos(),
        ];
        for i in 0..6 {
            c[i] += w * basis[i];
        }
    }
    Ok(c.map(|v| v / total))
}

fn distance(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn one_hot(pcs: &[PitchClass]) -> [f64; 12] {
    let mut w = [0.0; 12];
    for p in pcs {
        w[p.index()] += 1.0;
    }
    w
}

pub fn chord_centroid(chord: ChordSymbol) -> [f64; 6] {
    tonal_centroid(&one_hot(&chord.pitch_classes())).expect("a triad has three pitch classes")
}

pub fn pitch_class_centroid(pc: PitchClass) -> [f64; 6] {
    tonal_centroid(&one_hot(&[pc])).expect("one pitch class")
}

/// Mean centroid distance between consecutive slots.
pub fn ctd(progression: &ChordProgression) -> Result<f64, MetricError> {
    let slots = progression.slots();
    if slots.len() < 2 {
        return Err(MetricError::TooFewSlots(slots.len()));
    }
    let sum: f64 = slots
        .windows(2)
        .map(|w| distance(&chord_centroid(w[0]), &chord_centroid(w[1])))
        .sum();
    Ok(sum / (slots.len() - 1) as f64)
}

/// A melody note, or the part of it, sounding under one chord.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotePiece {
    pub note: usize,
    pub pitch_class: PitchClass,
    pub duration: Beats,
    pub chord: ChordSymbol,
}

pub fn note_pieces(melody: &MelodySegment, progression: &ChordProgression) -> Vec<NotePiece> {
    let mut out = Vec::new();
    for (i, n) in melody.notes().iter().enumerate() {
        for t in 0..progression.len() {
            let d = n.overlap(progression.slot_start(t), progression.slot_end(t));
            if d > Beats::zero() {
                out.push(NotePiece {
                    note: i,
                    pitch_class: n.pitch_class(),
                    duration: d,
                    chord: progression.slots()[t],
                });
            }
        }
    }
    out
}

fn pieces_nonempty(melody: &MelodySegment, progression: &ChordProgression) -> Result<Vec<NotePiece>, MetricError> {
    let p = note_pieces(melody, progression);
    if p.is_empty() {
        Err(MetricError::EmptyMelody)
    } else {
        Ok(p)
    }
}

fn ratio(num: Beats, den: Beats) -> f64 {
    (num / den).to_f64().unwrap_or(0.0)
}

/// Consonance of a melody pitch class against a chord root.
pub fn consonance(pc: PitchClass, chord: ChordSymbol) -> i32 {
    match pc.interval_from(chord.root) {
        0 | 3 | 4 | 7 | 8 | 9 => 1,
        5 => 0,
        _ => -1,
    }
}

pub fn pcs(melody: &MelodySegment, progression: &ChordProgression) -> Result<f64, MetricError> {
    let pieces = pieces_nonempty(melody, progression)?;
    let mut net = Beats::zero();
    let mut total = Beats::zero();
    for p in &pieces {
        net += p.duration * Beats::from_integer(consonance(p.pitch_class, p.chord) as i64);
        total += p.duration;
    }
    Ok(ratio(net, total))
}

pub fn mctd(melody: &MelodySegment, progression: &ChordProgression) -> Result<f64, MetricError> {
    let pieces = pieces_nonempty(melody, progression)?;
    let mut sum = 0.0;
    let mut total = 0.0;
    for p in &pieces {
        let w = p.duration.to_f64().unwrap_or(0.0);
        sum += w * distance(&pitch_class_centroid(p.pitch_class), &chord_centroid(p.chord));
        total += w;
    }
    Ok(sum / total)
}

/// `(n_c + n_p) / (n_c + n_n)` over note durations; a non-chord tone is
/// proper when the next melody note lies within two semitones.
pub fn ctnctr(melody: &MelodySegment, progression: &ChordProgression) -> Result<f64, MetricError> {
    let pieces = pieces_nonempty(melody, progression)?;
    let notes = melody.notes();
    let (mut n_c, mut n_n, mut n_p) = (Beats::zero(), Beats::zero(), Beats::zero());
    for p in &pieces {
        if p.chord.contains(p.pitch_class) {
            n_c += p.duration;
            continue;
        }
        n_n += p.duration;
        let pitch = notes[p.note].pitch as i32;
        if notes.get(p.note + 1).is_some_and(|next| (next.pitch as i32 - pitch).abs() <= 2) {
            n_p += p.duration;
        }
    }
    if n_n.is_zero() {
        return Ok(1.0);
    }
    Ok(ratio(n_c + n_p, n_c + n_n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub che: f64,
    pub cc: f64,
    pub ctd: f64,
    pub pcs: f64,
    pub mctd: f64,
    pub ctnctr: f64,
}

/// Signed `system - ground truth` for the diversity metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub che: f64,
    pub cc: f64,
    pub ctd: f64,
}

impl MetricReport {
    pub fn compute(melody: &MelodySegment, progression: &ChordProgression) -> Result<Self, MetricError> {
        Ok(MetricReport {
            che: che(progression)?,
            cc: cc(progression)? as f64,
            ctd: ctd(progression)?,
            pcs: pcs(melody, progression)?,
            mctd: mctd(melody, progression)?,
            ctnctr: ctnctr(melody, progression)?,
        })
    }

    /// Field-wise mean; `None` for an empty slice.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            che: sum(|r| r.che),
            cc: sum(|r| r.cc),
            ctd: sum(|r| r.ctd),
            pcs: sum(|r| r.pcs),
            mctd: sum(|r| r.mctd),
            ctnctr: sum(|r| r.ctnctr),
        })
    }
}

impl MetricDeltas {
    pub fn mean(deltas: &[MetricDeltas]) -> Option<MetricDeltas> {
        if deltas.is_empty() {
            return None;
        }
        let n = deltas.len() as f64;
        Some(MetricDeltas {
            che: deltas.iter().map(|d| d.che).sum::<f64>() / n,
            cc: deltas.iter().map(|d| d.cc).sum::<f64>() / n,
            ctd: deltas.iter().map(|d| d.ctd).sum::<f64>() / n,
        })
    }
}

pub fn delta_report(system: &MetricReport, ground_truth: &MetricReport) -> MetricDeltas {
    MetricDeltas {
        che: system.che - ground_truth.che,
        cc: system.cc - ground_truth.cc,
        ctd: system.ctd - ground_truth.ctd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::music::{Key, MelodyNote};
    use proptest::prelude::*;

    fn prog(symbols: &[&str]) -> ChordProgression {
        ChordProgression::new(
            symbols.iter().map(|s| s.parse().unwrap()).collect(),
            Beats::from_integer(4),
            Beats::zero(),
        )
        .unwrap()
    }

    fn melody(notes: &[(u8, i64, i64)], bars: u32) -> MelodySegment {
        let notes = notes
            .iter()
            .map(|&(p, on, d)| MelodyNote::new(p, Beats::from_integer(on), Beats::from_integer(d)))
            .collect();
        MelodySegment::new(notes, Key::major(0), 4, bars, vec![]).unwrap()
    }

    #[test]
    fn che_and_cc_examples() {
        assert_eq!(che(&prog(&["C:maj"; 5])).unwrap(), 0.0);
        assert!((che(&prog(&["C:maj", "D:min", "F:maj", "G:maj"])).unwrap() - 4f64.ln()).abs() < 1e-12);
        let hand = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((che(&prog(&["C:maj", "C:maj", "F:maj", "G:maj"])).unwrap() - hand).abs() < 1e-12);
        assert_eq!(cc(&prog(&["C:maj"; 3])).unwrap(), 1);
        assert_eq!(cc(&prog(&["C:maj", "F:maj", "G:maj", "C:maj"])).unwrap(), 3);
        let all: Vec<String> = ChordSymbol::vocabulary().map(|c| c.to_string()).collect();
        let all: Vec<&str> = all.iter().map(|s| s.as_str()).collect();
        assert_eq!(cc(&prog(&all)).unwrap(), 48);
    }

    #[test]
    fn centroid_examples() {
        let mut w = [0.0; 12];
        w[0] = 1.0;
        let c = tonal_centroid(&w).unwrap();
        let want = [0.0, 1.0, 0.0, 1.0, 0.0, 0.5];
        assert!(c.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
        let uniform = tonal_centroid(&[1.0; 12]).unwrap();
        assert!(uniform.iter().all(|v| v.abs() < 1e-9));
        assert!(tonal_centroid(&[0.0; 12]).is_err());
        // the tritone is antipodal on the fifths circle
        let far = pitch_class_centroid(PitchClass::new(6));
        assert!((far[1] + 1.0).abs() < 1e-12);
        for p in 1..12 {
            let d6 = distance(&pitch_class_centroid(PitchClass::new(0)), &far);
            let dp = distance(&pitch_class_centroid(PitchClass::new(0)), &pitch_class_centroid(PitchClass::new(p)));
            assert!(dp <= d6 + 1e-12, "pc {p}");
        }
    }

    #[test]
    fn ctd_examples() {
        assert_eq!(ctd(&prog(&["C:maj", "C:maj"])).unwrap(), 0.0);
        let one = ctd(&prog(&["C:maj", "G:maj"])).unwrap();
        assert!((ctd(&prog(&["C:maj", "G:maj", "C:maj", "G:maj"])).unwrap() - one).abs() < 1e-12);
        assert!(ctd(&prog(&["C:maj"])).is_err());
    }

    #[test]
    fn pcs_examples() {
        let c = prog(&["C:maj", "C:maj"]);
        assert_eq!(pcs(&melody(&[(60, 0, 8)], 2), &c).unwrap(), 1.0);
        assert_eq!(pcs(&melody(&[(66, 0, 8)], 2), &c).unwrap(), -1.0);
        assert_eq!(pcs(&melody(&[(64, 0, 4), (65, 4, 4)], 2), &c).unwrap(), 0.5);
        assert!(pcs(&melody(&[], 2), &c).is_err());
    }

    #[test]
    fn mctd_weighting() {
        let c = prog(&["C:maj"]);
        let root = mctd(&melody(&[(60, 0, 4)], 1), &c).unwrap();
        assert!(root > 0.0);
        let a = mctd(&melody(&[(60, 0, 2), (62, 2, 2)], 1), &c).unwrap();
        let d = mctd(&melody(&[(62, 0, 4)], 1), &c).unwrap();
        assert!((a - (root + d) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ctnctr_examples() {
        let c = prog(&["C:maj"]);
        assert_eq!(ctnctr(&melody(&[(60, 0, 1), (64, 1, 1)], 1), &c).unwrap(), 1.0);
        assert_eq!(ctnctr(&melody(&[(60, 0, 1), (62, 1, 1)], 1), &c).unwrap(), 0.5);
        assert_eq!(ctnctr(&melody(&[(60, 0, 1), (62, 1, 1), (64, 2, 1)], 1), &c).unwrap(), 1.0);
    }

    #[test]
    fn notes_split_at_chord_changes() {
        // E held across C -> A:min is a chord tone under both; F under G is not
        let p = prog(&["C:maj", "A:min"]);
        let m = melody(&[(64, 2, 4)], 2);
        assert_eq!(note_pieces(&m, &p).len(), 2);
        assert_eq!(ctnctr(&m, &p).unwrap(), 1.0);
        let m = melody(&[(65, 2, 4)], 2);
        assert_eq!(ctnctr(&m, &prog(&["F:maj", "G:maj"])).unwrap(), 0.5);
    }

    #[test]
    fn deltas() {
        let a = MetricReport { che: 1.2, cc: 3.0, ..Default::default() };
        let b = MetricReport { che: 1.4, cc: 3.0, ..Default::default() };
        let d = delta_report(&a, &b);
        assert!((d.che + 0.2).abs() < 1e-12);
        assert_eq!(d.cc, 0.0);
        assert_eq!(delta_report(&a, &a), MetricDeltas::default());
    }

    proptest! {
        #[test]
        fn che_bounded_by_log_cc(idx in proptest::collection::vec(0usize..48, 1..40)) {
            let p = ChordProgression::new(
                idx.iter().map(|&i| ChordSymbol::from_index(i).unwrap()).collect(),
                Beats::from_integer(4),
                Beats::zero(),
            ).unwrap();
            prop_assert!(che(&p).unwrap() <= (cc(&p).unwrap() as f64).ln() + 1e-12);
        }
    }
}
