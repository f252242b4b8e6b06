//! Template-correlation key finding over a duration-weighted chroma.

use thiserror::Error;

use crate::music::{beats_f64, Key, MelodyNote, Mode, PitchClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyError {
    #[error("cannot detect the key of an empty melody")]
    EmptyMelody,
}

/// Major key profile, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [
    6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88,
];
/// Minor key profile, tonic first.
pub const MINOR_PROFILE: [f64; 12] = [
    6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17,
];

/// Total sounding duration per pitch class.
pub fn pitch_class_histogram(notes: &[MelodyNote]) -> [f64; 12] {
    let mut h = [0.0; 12];
    for n in notes {
        h[n.pitch_class().index()] += beats_f64(n.duration);
    }
    h
}

/// Pearson correlation of `hist` rotated to `tonic` against `profile`.
///
/// Every sum runs in profile order so transposing the melody and the
/// tonic together reproduces the same floating-point result.
fn correlation(hist: &[f64; 12], tonic: usize, profile: &[f64; 12]) -> f64 {
    let x = |i: usize| hist[(i + tonic) % 12];
    let mean_x = (0..12).map(x).sum::<f64>() / 12.0;
    let mean_y = profile.iter().sum::<f64>() / 12.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, &y) in profile.iter().enumerate() {
        let dx = x(i) - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Most likely key among the 24 major/minor candidates.
///
/// Ties go to the lower tonic, and to major before minor.
pub fn detect_key(notes: &[MelodyNote]) -> Result<Key, KeyError> {
    if notes.is_empty() {
        return Err(KeyError::EmptyMelody);
    }
    let hist = pitch_class_histogram(notes);
    let mut best = (f64::NEG_INFINITY, Key::major(0));
    for tonic in 0..12 {
        for (mode, profile) in [(Mode::Major, &MAJOR_PROFILE), (Mode::Minor, &MINOR_PROFILE)] {
            let r = correlation(&hist, tonic, profile);
            if r > best.0 {
                best = (r, Key::new(PitchClass::new(tonic as i32), mode));
            }
        }
    }
    Ok(best.1)
}
