//! Seeded synthetic lead-sheet corpus.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::Song;
use crate::music::{
    Beats, ChordProgression, ChordQuality, ChordSymbol, Key, MelodyNote, MelodySegment, Mode, PitchClass,
};

/// Four-bar phrase templates as scale degrees, one chord per bar.
pub const PHRASE_TEMPLATES: [[u8; 4]; 10] = [
    [1, 4, 5, 1],
    [1, 5, 6, 4],
    [1, 6, 4, 5],
    [6, 4, 1, 5],
    [1, 4, 6, 5],
    [1, 2, 5, 1],
    [4, 5, 3, 6],
    [1, 3, 4, 5],
    [2, 5, 1, 6],
    [1, 4, 2, 5],
];

/// Degree swaps applied as seeded variation.
const SUBSTITUTES: [(u8, u8); 4] = [(4, 2), (1, 6), (6, 3), (2, 4)];

const RHYTHMS: [&[i64]; 7] = [&[4], &[2, 2], &[2, 1, 1], &[1, 1, 2], &[1, 1, 1, 1], &[3, 1], &[2, 1, 1]];

const LOW: i32 = 57;
const HIGH: i32 = 84;

fn degree_chord(key: Key, degree: u8, dominant_major: bool) -> ChordSymbol {
    let pos = (degree - 1) as usize;
    let root = key.scale()[pos];
    let mut quality = key.mode.diatonic_triads()[pos];
    if key.mode == Mode::Minor && degree == 5 && dominant_major {
        quality = ChordQuality::Major;
    }
    ChordSymbol::new(root, quality)
}

fn degrees(rng: &mut ChaCha8Rng, phrases: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(phrases * 4);
    for p in 0..phrases {
        let mut phrase = *PHRASE_TEMPLATES.choose(rng).expect("templates are non-empty");
        for d in phrase.iter_mut().skip(1) {
            if rng.gen_bool(0.15) {
                if let Some(&(_, to)) = SUBSTITUTES.iter().find(|(from, _)| from == d) {
                    *d = to;
                }
            }
        }
        if p + 1 == phrases {
            phrase[2] = 5;
            phrase[3] = 1;
        }
        out.extend(phrase);
    }
    out
}

fn chord_tone_near(rng: &mut ChaCha8Rng, chord: ChordSymbol, prev: i32) -> i32 {
    let mut tones: Vec<i32> = (LOW..=HIGH)
        .filter(|&p| chord.contains(PitchClass::new(p)))
        .collect();
    tones.sort_by_key(|&p| ((p - prev).abs(), p));
    tones[rng.gen_range(0..2)]
}

fn scale_step(key: Key, from: i32, up: bool) -> i32 {
    let scale = key.scale();
    let dir = if up { 1 } else { -1 };
    let mut p = from + dir;
    while !scale.contains(&PitchClass::new(p)) {
        p += dir;
    }
    p
}

fn melody_bar(
    rng: &mut ChaCha8Rng,
    key: Key,
    chord: ChordSymbol,
    bar: i64,
    prev: &mut i32,
    notes: &mut Vec<MelodyNote>,
) {
    let rhythm = RHYTHMS.choose(rng).expect("rhythms are non-empty");
    let mut beat = 0;
    for &dur in rhythm.iter() {
        let strong = beat % 2 == 0;
        let pitch = if !strong && rng.gen_bool(0.6) {
            let up = if *prev <= LOW + 2 {
                true
            } else if *prev >= HIGH - 2 {
                false
            } else {
                rng.gen_bool(0.5)
            };
            scale_step(key, *prev, up)
        } else {
            chord_tone_near(rng, chord, *prev)
        };
        notes.push(MelodyNote::new(
            pitch as u8,
            Beats::from_integer(bar * 4 + beat),
            Beats::from_integer(dur),
        ));
        *prev = pitch;
        beat += dur;
    }
}

fn song(seed: u64, index: usize) -> Song {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mode = if rng.gen_bool(0.3) { Mode::Minor } else { Mode::Major };
    let key = Key::new(PitchClass::new(rng.gen_range(0..12)), mode);
    let phrases = rng.gen_range(4..=8usize);
    let bars = phrases * 4;
    let dominant_major = rng.gen_bool(0.5);
    let chords: Vec<ChordSymbol> = degrees(&mut rng, phrases)
        .into_iter()
        .map(|d| degree_chord(key, d, dominant_major))
        .collect();

    let mut notes = Vec::new();
    let mut prev = 60 + key.tonic.value() as i32;
    for (b, &c) in chords.iter().enumerate() {
        melody_bar(&mut rng, key, c, b as i64, &mut prev, &mut notes);
    }
    let boundaries = (1..phrases as u32).map(|p| p * 4).collect();
    let melody = MelodySegment::new(notes, key, 4, bars as u32, boundaries).expect("generated melody is valid");
    let chords = ChordProgression::new(chords, Beats::from_integer(4), Beats::from_integer(0))
        .expect("generated grid is valid");
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "synthetic".to_string());
    Song {
        id: format!("synth-{seed}-{index:05}"),
        melody,
        chords: Some(chords),
        metadata,
    }
}

/// Generates `num_songs` songs of 16 to 32 bars in 4/4. Song `i` depends only
/// on `(seed, i)`.
pub fn generate_synthetic_corpus(num_songs: usize, seed: u64) -> Vec<Song> {
    (0..num_songs).map(|i| song(seed, i)).collect()
}
