//! Melody harmonization by retrieval, constrained editing and reranking.
//!
//! A query melody is embedded and matched against a melody/chord memory.
//! Each retrieved progression is projected onto a music-theoretic feasible
//! set with a Viterbi search over the 48 triads ([`editor`]), and the edited
//! candidates are ranked by a blend of retrieval similarity and edit cost
//! ([`reranker`]).
//!
//! ```text
//! melody -> encoder -> memory (top-K) -> editor (per candidate) -> reranker -> progression
//! ```
pub mod editor;
pub mod encoder;
pub mod ingest;
pub mod memory;
pub mod metrics;
pub mod music;
pub mod pipeline;
pub mod reranker;
