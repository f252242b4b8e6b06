//! Batch evaluation, the ablation table and the lambda grid search.

use rayon::prelude::*;
use serde::Serialize;

use super::{harmonize, Ablation, PipelineConfig, PipelineError};
use crate::ingest::{segment, SegmentSource, SegmentedPair, Song};
use crate::memory::{build_memory, Memory};
use crate::metrics::{delta_report, MetricDeltas, MetricReport};
use crate::music::ChordProgression;

/// Every `HOLDOUT_EVERY`-th song (index `i % HOLDOUT_EVERY == HOLDOUT_EVERY - 1`)
/// is held out as a query song.
pub const HOLDOUT_EVERY: usize = 5;

/// Splits songs into (memory songs, query songs).
pub fn split_songs(songs: &[Song]) -> (Vec<Song>, Vec<Song>) {
    let (q, m): (Vec<_>, Vec<_>) = songs
        .iter()
        .enumerate()
        .partition(|(i, _)| i % HOLDOUT_EVERY == HOLDOUT_EVERY - 1);
    (
        m.into_iter().map(|(_, s)| s.clone()).collect(),
        q.into_iter().map(|(_, s)| s.clone()).collect(),
    )
}

fn segment_all(songs: &[Song], config: &PipelineConfig) -> Result<Vec<SegmentedPair>, PipelineError> {
    let mut out = Vec::new();
    for s in songs {
        out.extend(segment(s, config.window_bars, config.hop_bars)?);
    }
    Ok(out)
}

/// Builds the memory from the non-held-out songs and returns up to
/// `max_queries` query segments from the held-out ones.
pub fn prepare_experiment(
    songs: &[Song],
    config: &PipelineConfig,
    max_queries: Option<usize>,
) -> Result<(Memory, Vec<SegmentedPair>), PipelineError> {
    let (memory_songs, query_songs) = split_songs(songs);
    let memory = build_memory(&segment_all(&memory_songs, config)?)?;
    let mut queries = segment_all(&query_songs, config)?;
    if let Some(n) = max_queries {
        queries.truncate(n);
    }
    Ok((memory, queries))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentMetrics {
    pub system: MetricReport,
    pub ground_truth: MetricReport,
    pub deltas: MetricDeltas,
    pub slots: usize,
    pub relaxed_slots: usize,
    #[serde(skip)]
    pub chords: ChordProgression,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEvaluation {
    pub source: SegmentSource,
    pub outcome: Result<SegmentMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub variant: Ablation,
    pub segments: Vec<SegmentEvaluation>,
    /// Means over the segments that succeeded.
    pub system: MetricReport,
    pub ground_truth: MetricReport,
    pub deltas: MetricDeltas,
    pub failures: usize,
    pub relaxed_slots: usize,
    pub total_slots: usize,
}

impl Evaluation {
    /// Share of output slots where the feasibility mask had to be lifted.
    pub fn relaxed_rate(&self) -> f64 {
        if self.total_slots == 0 {
            0.0
        } else {
            self.relaxed_slots as f64 / self.total_slots as f64
        }
    }

    fn successes(&self) -> impl Iterator<Item = &SegmentMetrics> {
        self.segments.iter().filter_map(|s| s.outcome.as_ref().ok())
    }
}

fn evaluate_one(pair: &SegmentedPair, memory: &Memory, config: &PipelineConfig) -> Result<SegmentMetrics, String> {
    let result = harmonize(&pair.melody, memory, config).map_err(|e| e.to_string())?;
    let chords = result.selected.edit.chords.clone();
    let system = MetricReport::compute(&pair.melody, &chords).map_err(|e| e.to_string())?;
    let ground_truth = MetricReport::compute(&pair.melody, &pair.chords).map_err(|e| e.to_string())?;
    Ok(SegmentMetrics {
        deltas: delta_report(&system, &ground_truth),
        system,
        ground_truth,
        slots: chords.len(),
        relaxed_slots: result.relaxed_slots.len(),
        chords,
        score: result.selected.score,
    })
}

/// Harmonizes every query with `config.ablation` and scores it against its
/// ground-truth chords. Per-segment failures are recorded, not raised.
pub fn evaluate(queries: &[SegmentedPair], memory: &Memory, config: &PipelineConfig) -> Result<Evaluation, PipelineError> {
    config.validate()?;
    if queries.is_empty() {
        return Err(PipelineError::NoQueries);
    }
    let segments: Vec<SegmentEvaluation> = queries
        .par_iter()
        .map(|q| SegmentEvaluation {
            source: q.source.clone(),
            outcome: evaluate_one(q, memory, config),
        })
        .collect();
    let mut eval = Evaluation {
        variant: config.ablation,
        failures: segments.iter().filter(|s| s.outcome.is_err()).count(),
        segments,
        system: MetricReport::default(),
        ground_truth: MetricReport::default(),
        deltas: MetricDeltas::default(),
        relaxed_slots: 0,
        total_slots: 0,
    };
    let ok: Vec<&SegmentMetrics> = eval.successes().collect();
    let system: Vec<MetricReport> = ok.iter().map(|m| m.system).collect();
    let truth: Vec<MetricReport> = ok.iter().map(|m| m.ground_truth).collect();
    let deltas: Vec<MetricDeltas> = ok.iter().map(|m| m.deltas).collect();
    let relaxed = ok.iter().map(|m| m.relaxed_slots).sum();
    let total = ok.iter().map(|m| m.slots).sum();
    eval.system = MetricReport::mean(&system).unwrap_or_default();
    eval.ground_truth = MetricReport::mean(&truth).unwrap_or_default();
    eval.deltas = MetricDeltas::mean(&deltas).unwrap_or_default();
    eval.relaxed_slots = relaxed;
    eval.total_slots = total;
    Ok(eval)
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

const METRIC_HEADER: [&str; 9] = [
    "delta_che",
    "delta_cc",
    "delta_ctd",
    "pcs",
    "mctd",
    "ctnctr",
    "che",
    "cc",
    "ctd",
];

fn metric_fields(r: &MetricReport, d: &MetricDeltas) -> Vec<String> {
    [d.che, d.cc, d.ctd, r.pcs, r.mctd, r.ctnctr, r.che, r.cc, r.ctd]
        .into_iter()
        .map(num)
        .collect()
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

/// One row per segment plus a final `mean` row; failed segments have empty
/// metric fields and the error message.
pub fn evaluation_csv(eval: &Evaluation) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["segment"];
    header.extend(METRIC_HEADER);
    header.extend(["relaxed_slots", "error"]);
    w.write_record(&header).expect("in-memory write");
    for s in &eval.segments {
        let mut row = vec![s.source.to_string()];
        match &s.outcome {
            Ok(m) => {
                row.extend(metric_fields(&m.system, &m.deltas));
                row.push(m.relaxed_slots.to_string());
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), METRIC_HEADER.len() + 1));
                row.push(e.clone());
            }
        }
        w.write_record(&row).expect("in-memory write");
    }
    let mut mean = vec!["mean".to_string()];
    mean.extend(metric_fields(&eval.system, &eval.deltas));
    mean.push(eval.relaxed_slots.to_string());
    mean.push(if eval.failures > 0 {
        format!("{} failed", eval.failures)
    } else {
        String::new()
    });
    w.write_record(&mean).expect("in-memory write");
    finish(w)
}

/// Evaluates all five variants in table order.
pub fn run_ablation_suite(
    queries: &[SegmentedPair],
    memory: &Memory,
    config: &PipelineConfig,
) -> Result<Vec<Evaluation>, PipelineError> {
    Ablation::ALL
        .iter()
        .map(|&a| {
            let c = PipelineConfig {
                ablation: a,
                ..config.clone()
            };
            evaluate(queries, memory, &c)
        })
        .collect()
}

/// Ground-truth row followed by one row per variant.
pub fn ablation_csv(evals: &[Evaluation]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant"];
    header.extend(METRIC_HEADER);
    header.extend(["segments", "failures", "relaxed_rate"]);
    w.write_record(&header).expect("in-memory write");
    if let Some(first) = evals.first() {
        let mut row = vec!["ground_truth".to_string()];
        row.extend(metric_fields(&first.ground_truth, &MetricDeltas::default()));
        row.extend([first.segments.len().to_string(), "0".into(), num(0.0)]);
        w.write_record(&row).expect("in-memory write");
    }
    for e in evals {
        let mut row = vec![e.variant.to_string()];
        row.extend(metric_fields(&e.system, &e.deltas));
        row.extend([e.segments.len().to_string(), e.failures.to_string(), num(e.relaxed_rate())]);
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

/// Fixed-width console rendering of the ablation results.
pub fn ablation_table(evals: &[Evaluation]) -> String {
    let mut out = format!(
        "{:<14}{:>10}{:>10}{:>10}{:>9}{:>9}{:>9}\n",
        "method", "dCHE", "dCC", "dCTD", "PCS", "MCTD", "CTnCTR"
    );
    if let Some(first) = evals.first() {
        let g = &first.ground_truth;
        out.push_str(&format!(
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>9.4}{:>9.4}{:>9.4}\n",
            "ground_truth", g.che, g.cc, g.ctd, g.pcs, g.mctd, g.ctnctr
        ));
    }
    for e in evals {
        out.push_str(&format!(
            "{:<14}{:>+10.4}{:>+10.4}{:>+10.4}{:>9.4}{:>9.4}{:>9.4}\n",
            e.variant.as_str(),
            e.deltas.che,
            e.deltas.cc,
            e.deltas.ctd,
            e.system.pcs,
            e.system.mctd,
            e.system.ctnctr
        ));
    }
    out
}

/// Scalar maximized by the lambda grid search: compatibility minus the
/// distance of chord diversity from ground truth.
pub fn lambda_objective(system: &MetricReport, deltas: &MetricDeltas) -> f64 {
    system.pcs - deltas.che.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub system: MetricReport,
    pub deltas: MetricDeltas,
    pub objective: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    pub rows: Vec<LambdaRow>,
}

/// Evaluates the full pipeline at each lambda in `grid`; ties on the
/// objective go to the larger lambda.
pub fn grid_search_lambda(
    validation: &[SegmentedPair],
    memory: &Memory,
    config: &PipelineConfig,
    grid: &[f64],
) -> Result<LambdaSearch, PipelineError> {
    if grid.is_empty() {
        return Err(PipelineError::Config("empty lambda grid".into()));
    }
    if validation.is_empty() {
        return Err(PipelineError::NoQueries);
    }
    let rows = grid
        .par_iter()
        .map(|&lambda| {
            let mut c = config.clone();
            c.ablation = Ablation::Full;
            c.rerank.lambda = lambda;
            let e = evaluate(validation, memory, &c)?;
            Ok(LambdaRow {
                lambda,
                objective: lambda_objective(&e.system, &e.deltas),
                system: e.system,
                deltas: e.deltas,
                failures: e.failures,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let best = rows
        .iter()
        .max_by(|a, b| {
            a.objective
                .total_cmp(&b.objective)
                .then_with(|| a.lambda.total_cmp(&b.lambda))
        })
        .expect("grid is non-empty");
    Ok(LambdaSearch {
        best_lambda: best.lambda,
        rows,
    })
}
