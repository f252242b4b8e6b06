//! Melody/chord memory: construction, exact cosine top-K retrieval, and a
//! checksummed binary file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "RERM" | version u16 | metadata len u32 | metadata
//!        | entry* (256 x f32 embedding | payload len u32 | payload)
//!        | sha256 of every preceding byte
//! ```

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::{cosine, encode, Embedding, EMBEDDING_DIM, ENCODER_VERSION};
use crate::ingest::{SegmentSource, SegmentedPair};
use crate::music::{Beats, ChordProgression, ChordSymbol, Key, MelodyNote, MelodySegment, Mode, PitchClass};

pub const MAGIC: &[u8; 4] = b"RERM";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_K: usize = 100;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory is empty: all {skipped} segments were silent")]
    Empty { skipped: usize },
    #[error("query melody is empty (zero embedding); nothing to retrieve")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("not a memory file (bad magic)")]
    BadMagic,
    #[error("memory format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("memory checksum mismatch: file is corrupted")]
    Checksum,
    #[error("memory file truncated in {0}")]
    Truncated(String),
    #[error("corrupt memory file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub embedding: Embedding,
    pub chords: ChordProgression,
    pub melody: MelodySegment,
    pub source: SegmentSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryMetadata {
    /// SHA-256 over the entries' melody, chord and provenance payloads.
    pub corpus_hash: [u8; 32],
    pub encoder_version: String,
    pub entry_count: u32,
    /// Silent segments dropped at build time.
    pub skipped: u32,
}

impl MemoryMetadata {
    pub fn corpus_hash_hex(&self) -> String {
        self.corpus_hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    entries: Vec<MemoryEntry>,
    metadata: MemoryMetadata,
}

/// One retrieved entry; `entry` indexes [`Memory::entries`].
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub entry: usize,
    pub source: SegmentSource,
    pub similarity: f64,
}

/// Descending similarity, then ascending provenance, then entry index.
pub fn retrieval_order(a: &Retrieval, b: &Retrieval) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.source.cmp(&b.source))
        .then_with(|| a.entry.cmp(&b.entry))
}

impl Memory {
    /// Wraps pre-encoded entries. Zero embeddings are dropped and counted.
    pub fn from_entries(entries: Vec<MemoryEntry>) -> Result<Self, MemoryError> {
        let total = entries.len();
        let entries: Vec<_> = entries.into_iter().filter(|e| !e.embedding.is_zero()).collect();
        let skipped = total - entries.len();
        if entries.is_empty() {
            return Err(MemoryError::Empty { skipped });
        }
        let mut hasher = Sha256::new();
        for e in &entries {
            hasher.update(encode_payload(e));
        }
        let metadata = MemoryMetadata {
            corpus_hash: hasher.finalize().into(),
            encoder_version: ENCODER_VERSION.to_string(),
            entry_count: entries.len() as u32,
            skipped: skipped as u32,
        };
        Ok(Memory { entries, metadata })
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &MemoryEntry {
        &self.entries[index]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &MemoryMetadata {
        &self.metadata
    }

    /// Exact top-`k` by cosine similarity over a full scan.
    pub fn retrieve(&self, query: &Embedding, k: usize) -> Result<Vec<Retrieval>, MemoryError> {
        retrieve(self, query, k)
    }
}

/// Encodes every pair (in parallel) and keeps those with sounding notes.
pub fn build_memory(pairs: &[SegmentedPair]) -> Result<Memory, MemoryError> {
    let entries: Vec<MemoryEntry> = pairs
        .par_iter()
        .map(|p| MemoryEntry {
            embedding: encode(&p.melody),
            chords: p.chords.clone(),
            melody: p.melody.clone(),
            source: p.source.clone(),
        })
        .collect();
    let memory = Memory::from_entries(entries)?;
    if memory.metadata.skipped > 0 {
        log::info!("skipped {} silent segments", memory.metadata.skipped);
    }
    Ok(memory)
}

pub fn retrieve(memory: &Memory, query: &Embedding, k: usize) -> Result<Vec<Retrieval>, MemoryError> {
    if k == 0 {
        return Err(MemoryError::InvalidK);
    }
    if query.is_zero() {
        return Err(MemoryError::EmptyQuery);
    }
    if memory.is_empty() {
        return Err(MemoryError::Empty { skipped: 0 });
    }
    let mut scored: Vec<Retrieval> = memory
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| Retrieval {
            entry: i,
            source: e.source.clone(),
            similarity: cosine(query, &e.embedding),
        })
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, retrieval_order);
        scored.truncate(k);
    }
    scored.sort_by(retrieval_order);
    Ok(scored)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn beats(&mut self, b: Beats) {
        self.i64(*b.numer());
        self.i64(*b.denom());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

fn encode_payload(e: &MemoryEntry) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.str(&e.source.song_id);
    w.u32(e.source.start_bar);

    w.u32(e.chords.len() as u32);
    w.beats(e.chords.slot_duration());
    w.beats(e.chords.start_beat());
    for c in e.chords.slots() {
        w.u8(c.index() as u8);
    }

    let m = &e.melody;
    w.u8(m.key().tonic.value());
    w.u8(matches!(m.key().mode, Mode::Minor) as u8);
    w.u32(m.beats_per_bar());
    w.u32(m.num_bars());
    w.u32(m.phrase_boundaries().len() as u32);
    for &b in m.phrase_boundaries() {
        w.u32(b);
    }
    w.u32(m.notes().len() as u32);
    for n in m.notes() {
        w.u8(n.pitch);
        w.beats(n.onset);
        w.beats(n.duration);
    }
    w.0
}

/// Serializes to the binary format.
pub fn memory_to_bytes(memory: &Memory) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);

    let mut meta = Writer(Vec::new());
    meta.0.extend_from_slice(&memory.metadata.corpus_hash);
    meta.str(&memory.metadata.encoder_version);
    meta.u32(memory.metadata.entry_count);
    meta.u32(memory.metadata.skipped);
    w.u32(meta.0.len() as u32);
    w.0.extend_from_slice(&meta.0);

    for e in &memory.entries {
        for v in e.embedding.values() {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
        let payload = encode_payload(e);
        w.u32(payload.len() as u32);
        w.0.extend_from_slice(&payload);
    }
    let digest: [u8; CHECKSUM_LEN] = Sha256::digest(&w.0).into();
    w.0.extend_from_slice(&digest);
    w.0
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MemoryError> {
        if self.data.len() - self.pos < n {
            return Err(MemoryError::Truncated(self.context.clone()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, MemoryError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, MemoryError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, MemoryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, MemoryError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn beats(&mut self) -> Result<Beats, MemoryError> {
        let n = self.i64()?;
        let d = self.i64()?;
        if d <= 0 {
            return Err(MemoryError::Corrupt(format!("{}: non-positive denominator", self.context)));
        }
        Ok(Beats::new(n, d))
    }
    fn str(&mut self) -> Result<String, MemoryError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| MemoryError::Corrupt(format!("{}: invalid UTF-8", self.context)))
    }
}

fn decode_entry(r: &mut Reader<'_>) -> Result<MemoryEntry, MemoryError> {
    let corrupt = |ctx: &str, e: &dyn std::fmt::Display| MemoryError::Corrupt(format!("{ctx}: {e}"));
    let mut values = [0f32; EMBEDDING_DIM];
    let raw = r.take(EMBEDDING_DIM * 4)?;
    for (v, b) in values.iter_mut().zip(raw.chunks_exact(4)) {
        *v = f32::from_le_bytes(b.try_into().unwrap());
    }
    let embedding = Embedding::from_values(values);

    let len = r.u32()? as usize;
    let payload = r.take(len)?;
    let mut p = Reader {
        data: payload,
        pos: 0,
        context: format!("{} payload", r.context),
    };
    let song_id = p.str()?;
    let start_bar = p.u32()?;

    let nslots = p.u32()? as usize;
    let slot_duration = p.beats()?;
    let start_beat = p.beats()?;
    let slots = p
        .take(nslots)?
        .iter()
        .map(|&i| {
            ChordSymbol::from_index(i as usize)
                .ok_or_else(|| MemoryError::Corrupt(format!("{}: chord index {i}", p.context)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let chords = ChordProgression::new(slots, slot_duration, start_beat).map_err(|e| corrupt(&p.context, &e))?;

    let tonic = p.u8()?;
    let mode = match p.u8()? {
        0 => Mode::Major,
        1 => Mode::Minor,
        m => return Err(MemoryError::Corrupt(format!("{}: mode {m}", p.context))),
    };
    if tonic > 11 {
        return Err(MemoryError::Corrupt(format!("{}: tonic {tonic}", p.context)));
    }
    let bpb = p.u32()?;
    let num_bars = p.u32()?;
    let nphrases = p.u32()? as usize;
    let phrases = (0..nphrases).map(|_| p.u32()).collect::<Result<Vec<_>, _>>()?;
    let nnotes = p.u32()? as usize;
    let mut notes = Vec::with_capacity(nnotes.min(payload.len()));
    for _ in 0..nnotes {
        let pitch = p.u8()?;
        let onset = p.beats()?;
        let duration = p.beats()?;
        notes.push(MelodyNote::new(pitch, onset, duration));
    }
    if p.pos != payload.len() {
        return Err(MemoryError::Corrupt(format!("{}: trailing bytes", p.context)));
    }
    let key = Key::new(PitchClass::new(tonic as i32), mode);
    let melody = MelodySegment::new(notes, key, bpb, num_bars, phrases).map_err(|e| corrupt(&p.context, &e))?;
    Ok(MemoryEntry {
        embedding,
        chords,
        melody,
        source: SegmentSource::new(song_id, start_bar),
    })
}

/// Parses the binary format. Structure is checked first (so truncation is
/// reported with the entry it hit), then the trailing checksum.
pub fn memory_from_bytes(data: &[u8]) -> Result<Memory, MemoryError> {
    let mut r = Reader {
        data,
        pos: 0,
        context: "header".into(),
    };
    if r.take(4).map_err(|_| MemoryError::BadMagic)? != MAGIC {
        return Err(MemoryError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(MemoryError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    r.context = "metadata".into();
    let meta_len = r.u32()? as usize;
    let meta_bytes = r.take(meta_len)?;
    let mut m = Reader {
        data: meta_bytes,
        pos: 0,
        context: "metadata".into(),
    };
    let corpus_hash: [u8; 32] = m.take(32)?.try_into().unwrap();
    let encoder_version = m.str()?;
    let entry_count = m.u32()?;
    let skipped = m.u32()?;

    let mut entries = Vec::with_capacity((entry_count as usize).min(data.len() / (EMBEDDING_DIM * 4)));
    for i in 0..entry_count as usize {
        r.context = format!("entry {i}");
        entries.push(decode_entry(&mut r)?);
    }
    r.context = "checksum".into();
    let body_end = r.pos;
    let stored = r.take(CHECKSUM_LEN)?;
    if r.pos != data.len() {
        return Err(MemoryError::Corrupt(format!(
            "{} unexpected bytes after checksum",
            data.len() - r.pos
        )));
    }
    let computed: [u8; CHECKSUM_LEN] = Sha256::digest(&data[..body_end]).into();
    if stored != computed {
        return Err(MemoryError::Checksum);
    }
    if encoder_version != ENCODER_VERSION {
        log::warn!("memory was built with encoder {encoder_version:?}, running {ENCODER_VERSION:?}");
    }
    if entries.is_empty() {
        return Err(MemoryError::Empty { skipped: skipped as usize });
    }
    Ok(Memory {
        entries,
        metadata: MemoryMetadata {
            corpus_hash,
            encoder_version,
            entry_count,
            skipped,
        },
    })
}

pub fn save_memory(memory: &Memory, path: impl AsRef<Path>) -> Result<(), MemoryError> {
    std::fs::write(path, memory_to_bytes(memory))?;
    Ok(())
}

pub fn load_memory(path: impl AsRef<Path>) -> Result<Memory, MemoryError> {
    memory_from_bytes(&std::fs::read(path)?)
}
