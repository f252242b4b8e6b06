//! End-to-end harmonization and its ablation variants.

mod evaluate;
mod synth;

pub use evaluate::{
    ablation_csv, ablation_table, evaluate, evaluation_csv, grid_search_lambda, lambda_objective, prepare_experiment,
    run_ablation_suite, split_songs, Evaluation, LambdaRow, LambdaSearch, SegmentEvaluation, SegmentMetrics,
    HOLDOUT_EVERY,
};
pub use synth::{generate_synthetic_corpus, PHRASE_TEMPLATES};

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::editor::{edit, EditConfig, EditError, EditResult, SlotCosts};
use crate::encoder::encode;
use crate::ingest::{IngestError, SegmentSource, DEFAULT_HOP_BARS, DEFAULT_WINDOW_BARS, MIN_SEGMENT_BARS};
use crate::memory::{Memory, MemoryError, Retrieval, DEFAULT_K};
use crate::music::{Beats, ChordProgression, ChordSymbol, MelodySegment, MusicError};
use crate::reranker::{rerank, Candidate, RankedCandidate, RerankConfig, RerankError};

pub const DEFAULT_MAX_CANDIDATES: usize = 20;
pub const DEFAULT_RANDOM_CANDIDATES: usize = 100;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("melody has no notes")]
    EmptyMelody,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Music(#[from] MusicError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoRetrieval,
    NoEditor,
    NoReranking,
    Random,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoRetrieval,
        Ablation::NoEditor,
        Ablation::NoReranking,
        Ablation::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRetrieval => "no_retrieval",
            Ablation::NoEditor => "no_editor",
            Ablation::NoReranking => "no_reranking",
            Ablation::Random => "random",
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Ablation {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown ablation variant \"{s}\"")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Retrieved candidates per query.
    pub k: usize,
    /// Ranked candidates kept in a result for inspection.
    pub max_candidates: usize,
    /// Candidate count of the no_retrieval variant.
    pub random_candidates: usize,
    /// Slot grid of random candidates.
    pub query_slots_per_bar: u32,
    pub window_bars: u32,
    pub hop_bars: u32,
    pub ablation: Ablation,
    pub seed: u64,
    pub edit: EditConfig,
    pub rerank: RerankConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: DEFAULT_K,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            random_candidates: DEFAULT_RANDOM_CANDIDATES,
            query_slots_per_bar: 1,
            window_bars: DEFAULT_WINDOW_BARS,
            hop_bars: DEFAULT_HOP_BARS,
            ablation: Ablation::Full,
            seed: 0,
            edit: EditConfig::default(),
            rerank: RerankConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.max_candidates == 0 || self.random_candidates == 0 || self.query_slots_per_bar == 0 {
            return bad("max_candidates, random_candidates and query_slots_per_bar must be positive".into());
        }
        if self.window_bars < MIN_SEGMENT_BARS || self.hop_bars == 0 || self.hop_bars > self.window_bars {
            return bad(format!(
                "window_bars = {} and hop_bars = {} need window >= {MIN_SEGMENT_BARS} and 0 < hop <= window",
                self.window_bars, self.hop_bars
            ));
        }
        self.edit.validate()?;
        self.rerank.validate()?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(text: &str) -> Result<Self, PipelineError> {
        let c: PipelineConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub encode_ms: f64,
    pub retrieve_ms: f64,
    pub edit_ms: f64,
    pub rerank_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizationResult {
    pub variant: Ablation,
    /// The selection; equal to `candidates[0]`.
    pub selected: RankedCandidate,
    pub candidates: Vec<RankedCandidate>,
    pub relaxed_slots: Vec<usize>,
    pub timing: StageTiming,
}

/// Maps a progression positionally onto `num_bars` bars starting at beat 0.
///
/// Grids with a whole number of slots per bar keep their slot length and
/// are cropped or tiled slot by slot. Other grids are sampled once per bar.
pub fn regrid(chords: &ChordProgression, beats_per_bar: u32, num_bars: u32) -> ChordProgression {
    let bar = Beats::from_integer(beats_per_bar as i64);
    let per_bar = bar / chords.slot_duration();
    let src = chords.slots();
    if per_bar.is_integer() {
        let n = (num_bars as i64 * per_bar.to_integer()) as usize;
        let slots = (0..n).map(|t| src[t % src.len()]).collect();
        return ChordProgression::new(slots, chords.slot_duration(), Beats::from_integer(0))
            .expect("tiled grid is valid");
    }
    let span = chords.end_beat() - chords.start_beat();
    let slots = (0..num_bars)
        .map(|b| {
            let at = bar * Beats::from_integer(b as i64);
            let off = at - (at / span).floor() * span;
            src[chords.slot_at(chords.start_beat() + off).unwrap_or(src.len() - 1)]
        })
        .collect();
    ChordProgression::new(slots, bar, Beats::from_integer(0)).expect("bar grid is valid")
}

fn query_grid_slot(melody: &MelodySegment, config: &PipelineConfig) -> (Beats, usize) {
    let slot = melody.bar_length() / Beats::from_integer(config.query_slots_per_bar as i64);
    (slot, (melody.num_bars() * config.query_slots_per_bar) as usize)
}

/// Stable 64-bit digest of a melody, mixed into the seed of randomized variants.
pub fn melody_fingerprint(melody: &MelodySegment) -> u64 {
    let mut h = Sha256::new();
    h.update(melody.beats_per_bar().to_le_bytes());
    h.update(melody.num_bars().to_le_bytes());
    for n in melody.notes() {
        h.update([n.pitch]);
        for b in [n.onset, n.duration] {
            h.update(b.numer().to_le_bytes());
            h.update(b.denom().to_le_bytes());
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn random_progression(rng: &mut ChaCha8Rng, slot: Beats, n: usize) -> ChordProgression {
    let slots = (0..n)
        .map(|_| ChordSymbol::from_index(rng.gen_range(0..crate::music::VOCAB_SIZE)).expect("index in range"))
        .collect();
    ChordProgression::new(slots, slot, Beats::from_integer(0)).expect("random grid is valid")
}

fn random_retrieval(i: usize) -> Retrieval {
    Retrieval {
        entry: i,
        source: SegmentSource::new("random", i as u32),
        similarity: 0.0,
    }
}

fn pass_through(chords: ChordProgression) -> EditResult {
    EditResult {
        breakdown: vec![SlotCosts::default(); chords.len()],
        chords,
        cost: 0.0,
        changed_slots: vec![],
        relaxed_slots: vec![],
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the variant selected by `config.ablation`.
pub fn harmonize(
    melody: &MelodySegment,
    memory: &Memory,
    config: &PipelineConfig,
) -> Result<HarmonizationResult, PipelineError> {
    config.validate()?;
    if melody.is_empty() {
        return Err(PipelineError::EmptyMelody);
    }
    let mut timing = StageTiming::default();
    let variant = config.ablation;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ melody_fingerprint(melody));
    let (bpb, bars) = (melody.beats_per_bar(), melody.num_bars());

    let retrieve = |timing: &mut StageTiming, k: usize| -> Result<Vec<(Retrieval, ChordProgression)>, PipelineError> {
        let t = Instant::now();
        let query = encode(melody);
        timing.encode_ms = elapsed_ms(t);
        let t = Instant::now();
        let hits = memory.retrieve(&query, k)?;
        timing.retrieve_ms = elapsed_ms(t);
        Ok(hits
            .into_iter()
            .map(|r| {
                let chords = regrid(&memory.entry(r.entry).chords, bpb, bars);
                (r, chords)
            })
            .collect())
    };

    let pool: Vec<(Retrieval, ChordProgression)> = match variant {
        Ablation::Full | Ablation::NoEditor => retrieve(&mut timing, config.k)?,
        Ablation::NoReranking => retrieve(&mut timing, 1)?,
        Ablation::NoRetrieval => {
            let (slot, n) = query_grid_slot(melody, config);
            (0..config.random_candidates)
                .map(|i| (random_retrieval(i), random_progression(&mut rng, slot, n)))
                .collect()
        }
        Ablation::Random => {
            let (slot, n) = query_grid_slot(melody, config);
            vec![(random_retrieval(0), random_progression(&mut rng, slot, n))]
        }
    };

    let t = Instant::now();
    let candidates = pool
        .into_par_iter()
        .map(|(retrieval, retrieved)| {
            let edit = match variant {
                Ablation::NoEditor | Ablation::Random => pass_through(retrieved.clone()),
                _ => edit(&retrieved, melody, &config.edit)?,
            };
            Ok(Candidate {
                retrieval,
                retrieved,
                edit,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    timing.edit_ms = elapsed_ms(t);

    let t = Instant::now();
    let mut ranked = rerank(candidates, &config.rerank)?;
    ranked.truncate(config.max_candidates);
    timing.rerank_ms = elapsed_ms(t);

    let selected = ranked[0].clone();
    Ok(HarmonizationResult {
        variant,
        relaxed_slots: selected.edit.relaxed_slots.clone(),
        selected,
        candidates: ranked,
        timing,
    })
}

/// JSON payload of one ranked candidate.
pub fn candidate_json(rank: usize, c: &RankedCandidate) -> serde_json::Value {
    let symbols = |p: &ChordProgression| -> Vec<String> { p.slots().iter().map(|s| s.to_string()).collect() };
    let breakdown: Vec<serde_json::Value> = c
        .edit
        .breakdown
        .iter()
        .map(|b| {
            serde_json::json!({
                "substitution": b.substitution,
                "tonal": b.tonal,
                "cadence": b.cadence,
                "regularization": b.regularization,
                "total": b.total(),
            })
        })
        .collect();
    serde_json::json!({
        "rank": rank,
        "source": c.retrieval.source.to_string(),
        "song_id": c.retrieval.source.song_id,
        "start_bar": c.retrieval.source.start_bar,
        "entry": c.retrieval.entry,
        "similarity": c.retrieval.similarity,
        "slot_beats": crate::music::format_beats(c.edit.chords.slot_duration()),
        "retrieved": symbols(&c.retrieved),
        "edited": symbols(&c.edit.chords),
        "changed_slots": c.edit.changed_slots,
        "relaxed_slots": c.edit.relaxed_slots,
        "cost": c.edit.cost,
        "breakdown": breakdown,
        "s_ret": c.s_ret,
        "s_edit": c.s_edit,
        "score": c.score,
    })
}

/// JSON payload of a harmonization, as served over HTTP and written by the CLI.
pub fn harmonization_json(result: &HarmonizationResult, config: &PipelineConfig) -> serde_json::Value {
    serde_json::json!({
        "variant": result.variant.as_str(),
        "lambda": config.rerank.lambda,
        "gamma": config.rerank.gamma,
        "final": candidate_json(0, &result.selected),
        "candidates": result
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| candidate_json(i, c))
            .collect::<Vec<_>>(),
        "relaxed_slots": result.relaxed_slots,
        "timing": result.timing,
    })
}

/// [`harmonize`] with the variant overridden.
pub fn run_ablation(
    melody: &MelodySegment,
    memory: &Memory,
    config: &PipelineConfig,
    variant: Ablation,
) -> Result<HarmonizationResult, PipelineError> {
    let config = PipelineConfig {
        ablation: variant,
        ..config.clone()
    };
    harmonize(melody, memory, &config)
}
