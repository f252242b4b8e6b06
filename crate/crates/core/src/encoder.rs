//! Deterministic 256-dimensional melody embedding.
//!
//! Layout:
//!
//! | positions | feature                                              |
//! |-----------|------------------------------------------------------|
//! | 0..192    | per-bar duration-weighted chroma, bars 0..16         |
//! | 192..204  | whole-segment duration-weighted chroma               |
//! | 204..229  | melodic interval histogram, -12..=+12 (clamped)      |
//! | 229..241  | onset position within the bar, 12 equal bins         |
//! | 241..256  | reserved, always zero                                |
//!
//! Each bar's chroma and each whole-segment block is L1-normalized on its
//! own, then the full vector is L2-normalized. Values are stored as `f32`.

use crate::music::{beats_f64, Beats, MelodySegment};

pub const EMBEDDING_DIM: usize = 256;
/// Identifies the feature layout in persisted memories.
pub const ENCODER_VERSION: &str = "rer-feature-encoder/1";

pub const BAR_BLOCKS: usize = 16;
pub const BAR_CHROMA: std::ops::Range<usize> = 0..192;
pub const GLOBAL_CHROMA: std::ops::Range<usize> = 192..204;
pub const INTERVALS: std::ops::Range<usize> = 204..229;
pub const ONSETS: std::ops::Range<usize> = 229..241;
pub const RESERVED: std::ops::Range<usize> = 241..256;

/// Stored vectors are `f32`, so the cached norm of a normalized embedding is
/// 1 only to single precision.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Box<[f32; EMBEDDING_DIM]>,
    norm: f64,
}

impl Embedding {
    /// Wraps raw values as-is (no normalization) and caches their norm.
    pub fn from_values(values: [f32; EMBEDDING_DIM]) -> Self {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        Embedding {
            values: Box::new(values),
            norm,
        }
    }

    /// L2-normalizes `values`; an all-zero input gives the zero embedding.
    pub fn normalized(values: &[f64; EMBEDDING_DIM]) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self::zero();
        }
        Self::from_values(values.map(|v| (v / norm) as f32))
    }

    pub fn zero() -> Self {
        Embedding {
            values: Box::new([0.0; EMBEDDING_DIM]),
            norm: 0.0,
        }
    }

    pub fn values(&self) -> &[f32; EMBEDDING_DIM] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Set for segments with no sounding notes.
    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

/// Cosine similarity, defined as 0 when either side is the zero embedding.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    (dot / (a.norm * b.norm)).clamp(-1.0, 1.0)
}

fn l1_normalize(block: &mut [f64]) {
    let total: f64 = block.iter().sum();
    if total > 0.0 {
        block.iter_mut().for_each(|v| *v /= total);
    }
}

/// Raw feature counts before any normalization.
pub fn raw_features(segment: &MelodySegment) -> [f64; EMBEDDING_DIM] {
    let mut f = [0.0; EMBEDDING_DIM];
    let bar = segment.bar_length();
    for n in segment.notes() {
        let pc = n.pitch_class().index();
        let dur = beats_f64(n.duration);
        f[GLOBAL_CHROMA.start + pc] += dur;

        let first_bar = (n.onset / bar).floor().to_integer().max(0) as usize;
        for b in first_bar..BAR_BLOCKS {
            let start = bar * Beats::from_integer(b as i64);
            if start >= n.end() {
                break;
            }
            let overlap = n.overlap(start, start + bar);
            f[BAR_CHROMA.start + b * 12 + pc] += beats_f64(overlap);
        }

        let in_bar = n.onset - (n.onset / bar).floor() * bar;
        let bin = (in_bar * Beats::from_integer(12) / bar).floor().to_integer().clamp(0, 11) as usize;
        f[ONSETS.start + bin] += 1.0;
    }
    for w in segment.notes().windows(2) {
        let step = (w[1].pitch as i32 - w[0].pitch as i32).clamp(-12, 12);
        f[INTERVALS.start + (step + 12) as usize] += 1.0;
    }
    f
}

/// Raw features with each bar chroma and each global block L1-normalized.
pub fn block_features(segment: &MelodySegment) -> [f64; EMBEDDING_DIM] {
    let mut f = raw_features(segment);
    for b in 0..BAR_BLOCKS {
        l1_normalize(&mut f[b * 12..(b + 1) * 12]);
    }
    for r in [GLOBAL_CHROMA, INTERVALS, ONSETS] {
        l1_normalize(&mut f[r]);
    }
    f
}

pub fn encode(segment: &MelodySegment) -> Embedding {
    Embedding::normalized(&block_features(segment))
}
