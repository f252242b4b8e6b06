//! Final selection among edited candidates.
//!
//! Each candidate gets `S = lambda * s_ret + (1 - lambda) * s_edit` with
//! `s_edit = 2 / (1 + exp(gamma * d))`, so an unedited candidate (d = 0) has
//! `s_edit = 1` and the edit score decays towards 0 as the edit cost grows.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::editor::EditResult;
use crate::memory::Retrieval;
use crate::music::ChordProgression;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RerankError {
    #[error("lambda = {0} must be in [0, 1]")]
    InvalidLambda(f64),
    #[error("gamma = {0} must be finite and > 0")]
    InvalidGamma(f64),
    #[error("edit cost {0} must be >= 0")]
    NegativeCost(f64),
    #[error("no candidates to rerank")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig { lambda: 0.5, gamma: 0.1 }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(RerankError::InvalidLambda(self.lambda));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(RerankError::InvalidGamma(self.gamma));
        }
        Ok(())
    }
}

/// Sigmoid decay of the edit cost, never below the smallest positive normal.
pub fn edit_score(d: f64, gamma: f64) -> Result<f64, RerankError> {
    if !(d >= 0.0) {
        return Err(RerankError::NegativeCost(d));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(RerankError::InvalidGamma(gamma));
    }
    Ok((2.0 / (1.0 + (gamma * d).exp())).max(f64::MIN_POSITIVE))
}

/// Cosine similarity clamped to [0, 1].
pub fn retrieval_score(similarity: f64) -> f64 {
    similarity.clamp(0.0, 1.0)
}

pub fn global_score(s_ret: f64, s_edit: f64, lambda: f64) -> f64 {
    lambda * s_ret + (1.0 - lambda) * s_edit
}

/// A retrieved progression (already on the query grid) and its edit.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub retrieval: Retrieval,
    pub retrieved: ChordProgression,
    pub edit: EditResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub retrieval: Retrieval,
    pub retrieved: ChordProgression,
    pub edit: EditResult,
    pub s_ret: f64,
    pub s_edit: f64,
    pub score: f64,
}

/// Descending score, then descending `s_ret`, then provenance.
pub fn rank_order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.s_ret.total_cmp(&a.s_ret))
        .then_with(|| a.retrieval.source.cmp(&b.retrieval.source))
        .then_with(|| a.retrieval.entry.cmp(&b.retrieval.entry))
}

pub fn score_candidate(candidate: Candidate, config: &RerankConfig) -> Result<RankedCandidate, RerankError> {
    let s_ret = retrieval_score(candidate.retrieval.similarity);
    let s_edit = edit_score(candidate.edit.cost, config.gamma)?;
    Ok(RankedCandidate {
        score: global_score(s_ret, s_edit, config.lambda),
        s_ret,
        s_edit,
        retrieval: candidate.retrieval,
        retrieved: candidate.retrieved,
        edit: candidate.edit,
    })
}

/// Scores and sorts candidates; the first element is the selection.
pub fn rerank(candidates: Vec<Candidate>, config: &RerankConfig) -> Result<Vec<RankedCandidate>, RerankError> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    let mut ranked = candidates
        .into_iter()
        .map(|c| score_candidate(c, config))
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(rank_order);
    Ok(ranked)
}
