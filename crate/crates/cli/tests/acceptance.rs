use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rer_core::editor::{
    edit_with_vocabulary, slot_melodies, tonal_alignment_cost, transition_cost, EditConfig, EditResult, SlotMelody,
};
use rer_core::encoder::{encode, Embedding, EMBEDDING_DIM};
use rer_core::ingest::{parse_corpus_json, parse_smf, segment, songs_to_corpus_json, SegmentSource, SegmentedPair};
use rer_core::memory::{
    memory_from_bytes, memory_to_bytes, build_memory, load_memory, save_memory, Memory, MemoryEntry, MemoryError,
    Retrieval, FORMAT_VERSION,
};
use rer_core::metrics::{che, ctnctr, tonal_centroid, MetricReport};
use rer_core::music::{roman_degree, Beats, ChordProgression, ChordSymbol, Key, MelodyNote, MelodySegment, Mode, PitchClass};
use rer_core::pipeline::{
    generate_synthetic_corpus, harmonize, prepare_experiment, run_ablation_suite, Ablation, Evaluation, PipelineConfig,
};
use rer_core::reranker::{edit_score, rerank, Candidate, RerankConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn beats(n: i64, d: i64) -> Beats {
    Beats::new(n, d)
}

fn chord(i: usize) -> ChordSymbol {
    ChordSymbol::from_index(i).unwrap()
}

// ---- editor optimality ----

struct Instance {
    melody: MelodySegment,
    retrieved: ChordProgression,
    config: EditConfig,
}

fn random_instance(rng: &mut ChaCha8Rng, slots: usize, slot_beats: i64) -> Instance {
    let bars = (slots as i64 * slot_beats / 4) as u32;
    let mode = if rng.gen_bool(0.5) { Mode::Major } else { Mode::Minor };
    let key = Key::new(PitchClass::new(rng.gen_range(0..12)), mode);
    let mut notes = Vec::new();
    let mut t = 0i64;
    while t < bars as i64 * 4 {
        let d = rng.gen_range(1..=3).min(bars as i64 * 4 - t);
        if rng.gen_bool(0.75) {
            notes.push(MelodyNote::new(rng.gen_range(55..80), Beats::from_integer(t), Beats::from_integer(d)));
        }
        t += d;
    }
    let phrases = (1..bars).filter(|_| rng.gen_bool(0.4)).collect();
    let melody = MelodySegment::new(notes, key, 4, bars, phrases).unwrap();
    let chords = (0..slots).map(|_| chord(rng.gen_range(0..48))).collect();
    let retrieved = ChordProgression::new(chords, Beats::from_integer(slot_beats), Beats::from_integer(0)).unwrap();
    let config = EditConfig {
        w_sub: rng.gen_range(0.0..3.0),
        w_tonal: rng.gen_range(0.0..4.0),
        w_cad: rng.gen_range(0.0..2.0),
        w_reg: rng.gen_range(0.0..2.0),
        style: rng.gen_range(0.0..1.0),
        tonal_hard_threshold: if rng.gen_bool(0.8) { 0.999 } else { rng.gen_range(0.3..1.0) },
    };
    Instance { melody, retrieved, config }
}

/// Phrase ranges in slots, from slot start times.
fn phrases(inst: &Instance) -> Vec<(usize, usize)> {
    let r = &inst.retrieved;
    let b = inst.melody.phrase_boundaries();
    let mut out = Vec::new();
    for w in b.windows(2) {
        let inside: Vec<usize> = (0..r.len())
            .filter(|&t| {
                let bar = r.slot_start(t) / Beats::from_integer(4);
                bar >= Beats::from_integer(w[0] as i64) && bar < Beats::from_integer(w[1] as i64)
            })
            .collect();
        if let (Some(&a), Some(&z)) = (inside.first(), inside.last()) {
            out.push((a, z));
        }
    }
    out
}

/// Exhaustive minimum of the edit objective over `vocab^n` under the tonal mask.
fn brute_force(inst: &Instance, vocab: &[ChordSymbol]) -> (f64, Vec<Vec<ChordSymbol>>) {
    let key = inst.melody.key();
    let n = inst.retrieved.len();
    let cfg = &inst.config;
    let slots: Vec<SlotMelody> = slot_melodies(&inst.retrieved, &inst.melody);
    let allowed: Vec<Vec<ChordSymbol>> = (0..n)
        .map(|t| {
            let ok: Vec<ChordSymbol> = vocab
                .iter()
                .copied()
                .filter(|&c| slots[t].is_empty() || tonal_alignment_cost(c, &slots[t]) <= cfg.tonal_hard_threshold)
                .collect();
            if ok.is_empty() { vocab.to_vec() } else { ok }
        })
        .collect();
    let tonic = |c: ChordSymbol| roman_degree(c, key).is_some_and(|d| d.degree == 1);
    let dominant = |c: ChordSymbol| roman_degree(c, key).is_some_and(|d| d.degree == 5);
    let ph = phrases(inst);
    let cost = |seq: &[ChordSymbol]| -> f64 {
        let mut d = 0.0;
        for t in 0..n {
            if seq[t] != inst.retrieved.slots()[t] {
                d += cfg.w_sub;
            }
            d += cfg.w_tonal * tonal_alignment_cost(seq[t], &slots[t]);
            if t > 0 {
                d += cfg.w_reg * transition_cost(seq[t - 1], seq[t], key, cfg.style);
            }
        }
        for &(a, z) in &ph {
            let mut cad = if tonic(seq[a]) { 0.0 } else { 0.5 };
            cad += if z > a && dominant(seq[z - 1]) && tonic(seq[z]) {
                0.0
            } else if tonic(seq[z]) || dominant(seq[z]) {
                0.25
            } else {
                0.75
            };
            d += cfg.w_cad * cad;
        }
        d
    };
    let mut best = f64::INFINITY;
    let mut argmins = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let seq: Vec<ChordSymbol> = (0..n).map(|t| allowed[t][idx[t]]).collect();
        let d = cost(&seq);
        if d < best - 1e-9 {
            best = d;
            argmins = vec![seq];
        } else if (d - best).abs() <= 1e-9 {
            argmins.push(seq);
        }
        let mut t = n;
        loop {
            if t == 0 {
                return (best, argmins);
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < allowed[t].len() {
                break;
            }
            idx[t] = 0;
        }
    }
}

fn viterbi_oracle() -> Outcome {
    let start = Instant::now();
    let full: Vec<ChordSymbol> = ChordSymbol::vocabulary().collect();
    let gaps: Vec<(f64, bool)> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xED17 + i);
            let (inst, vocab) = if i < 100 {
                (random_instance(&mut rng, 3, 4), full.clone())
            } else {
                let inst = random_instance(&mut rng, 6, 2);
                let mut vocab = Vec::new();
                while vocab.len() < 8 {
                    let c = chord(rng.gen_range(0..48));
                    if !vocab.contains(&c) {
                        vocab.push(c);
                    }
                }
                (inst, vocab)
            };
            let e = edit_with_vocabulary(&inst.retrieved, &inst.melody, &inst.config, &vocab).unwrap();
            let (best, argmins) = brute_force(&inst, &vocab);
            ((e.cost - best).abs(), argmins.iter().any(|s| s.as_slice() == e.chords.slots()))
        })
        .collect();
    let elapsed = start.elapsed();
    let worst = gaps.iter().map(|g| g.0).fold(0.0, f64::max);
    let attained = gaps.iter().filter(|g| g.1).count();
    Outcome::new(
        worst <= 1e-9 && attained == gaps.len() && elapsed < Duration::from_secs(120),
        format!(
            "{} instances (100 x 48^3, 100 x 8^6), max |cost - min| = {worst:.1e}, argmin attained {attained}/{}, {:.1}s",
            gaps.len(),
            gaps.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---- scoring ----

fn candidate(entry: usize, similarity: f64, cost: f64) -> Candidate {
    let chords = ChordProgression::new(vec![chord(0)], Beats::from_integer(4), Beats::from_integer(0)).unwrap();
    Candidate {
        retrieval: Retrieval {
            entry,
            source: SegmentSource::new("q", entry as u32),
            similarity,
        },
        retrieved: chords.clone(),
        edit: EditResult {
            chords,
            cost,
            breakdown: vec![],
            changed_slots: vec![],
            relaxed_slots: vec![],
        },
    }
}

fn score_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C0E);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let s_ret: f64 = rng.gen_range(0.0..=1.0);
        let d: f64 = if rng.gen_bool(0.05) { 0.0 } else { rng.gen_range(0.0..60.0) };
        let lambda: f64 = rng.gen_range(0.0..=1.0);
        let gamma: f64 = rng.gen_range(0.001..4.0);
        let r = &rerank(vec![candidate(0, s_ret, d)], &RerankConfig { lambda, gamma }).unwrap()[0];
        let expected = lambda * s_ret + (1.0 - lambda) * (2.0 / (1.0 + (gamma * d).exp()));
        worst = worst.max((r.score - expected).abs());
    }

    let zero_ok = [1e-6, 0.01, 0.1, 1.0, 10.0, 1e3].iter().all(|&g| edit_score(0.0, g).unwrap() == 1.0);

    let mut decreasing = true;
    for gamma in [0.01, 0.1, 0.5, 1.0] {
        let mut grid: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..200.0)).collect();
        grid.push(0.0);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let s: Vec<f64> = grid.iter().map(|&d| edit_score(d, gamma).unwrap()).collect();
        decreasing &= s.windows(2).all(|w| w[1] < w[0]);
    }

    let mut invariant = 0;
    let trials = 300;
    for _ in 0..trials {
        let n = rng.gen_range(2..25);
        let cands: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..30.0))).collect();
        let lambda = rng.gen_range(0.0..=1.0);
        let gamma = rng.gen_range(0.01..1.0);
        let order = |scale: f64| -> Vec<usize> {
            let cs = cands.iter().enumerate().map(|(i, &(s, d))| candidate(i, s, d * scale)).collect();
            let config = RerankConfig { lambda, gamma: gamma / scale };
            rerank(cs, &config).unwrap().iter().map(|r| r.retrieval.entry).collect()
        };
        let base = order(1.0);
        if [0.25, 0.5, 2.0, 4.0, 8.0].iter().all(|&c| order(c) == base) {
            invariant += 1;
        }
    }

    Outcome::new(
        worst <= 1e-12 && zero_ok && decreasing && invariant == trials,
        format!(
            "10000 tuples max |S - recomputed| = {worst:.1e}; s_edit(0) == 1: {zero_ok}; strictly decreasing: {decreasing}; rescaled ranking identical {invariant}/{trials}"
        ),
    )
}

// ---- retrieval ----

fn oracle_cosine(a: &Embedding, b: &Embedding) -> f64 {
    let norm = |e: &Embedding| e.values().iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    let dot: f64 = a.values().iter().zip(b.values().iter()).map(|(&x, &y)| x as f64 * y as f64).sum();
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

fn random_embedding(rng: &mut ChaCha8Rng) -> Embedding {
    let mut v = [0f32; EMBEDDING_DIM];
    for x in v.iter_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    Embedding::from_values(v)
}

fn random_memory(rng: &mut ChaCha8Rng, n: usize) -> Memory {
    let melody = MelodySegment::new(
        vec![MelodyNote::new(60, Beats::from_integer(0), Beats::from_integer(4))],
        Key::major(0),
        4,
        1,
        vec![],
    )
    .unwrap();
    let chords = ChordProgression::new(vec![chord(0)], Beats::from_integer(4), Beats::from_integer(0)).unwrap();
    let mut entries: Vec<MemoryEntry> = Vec::with_capacity(n);
    for _ in 0..n {
        let embedding = if !entries.is_empty() && rng.gen_bool(0.1) {
            entries[rng.gen_range(0..entries.len())].embedding.clone()
        } else {
            random_embedding(rng)
        };
        let source = SegmentSource::new(format!("song-{}", rng.gen_range(0..n / 3 + 1)), rng.gen_range(0..3) * 8);
        entries.push(MemoryEntry {
            embedding,
            chords: chords.clone(),
            melody: melody.clone(),
            source,
        });
    }
    Memory::from_entries(entries).unwrap()
}

fn brute_top_k(memory: &Memory, query: &Embedding, k: usize) -> Vec<Retrieval> {
    let mut all: Vec<Retrieval> = memory
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| Retrieval {
            entry: i,
            source: e.source.clone(),
            similarity: oracle_cosine(query, &e.embedding),
        })
        .collect();
    all.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.entry.cmp(&b.entry))
    });
    all.truncate(k);
    all
}

/// Position of `entry` when querying with its own embedding, and whether only exact duplicates precede it.
fn self_rank(memory: &Memory, entry: usize, query: &Embedding) -> (bool, f64) {
    let all = memory.retrieve(query, memory.len()).unwrap();
    let pos = all.iter().position(|r| r.entry == entry).unwrap();
    let sim = all[pos].similarity;
    let only_ties = all[..pos].iter().all(|r| (r.similarity - 1.0).abs() <= 1e-9);
    (only_ties && (all[0].similarity - 1.0).abs() <= 1e-9, sim)
}

fn retrieval_exactness() -> Outcome {
    let sizes = [1usize, 2, 3, 5, 8, 13, 50, 99, 100, 101, 250, 512, 777, 999, 1000];
    let results: Vec<(usize, usize, usize, usize, f64)> = sizes
        .par_iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7E7 + n as u64);
            let memory = random_memory(&mut rng, n);
            let mut checks = 0;
            let mut matches = 0;
            for q in 0..20 {
                let query = if q % 4 == 3 {
                    memory.entry(rng.gen_range(0..n)).embedding.clone()
                } else {
                    random_embedding(&mut rng)
                };
                for k in [1, 5, 100, n] {
                    checks += 1;
                    if memory.retrieve(&query, k).unwrap() == brute_top_k(&memory, &query, k) {
                        matches += 1;
                    }
                }
            }
            let mut self_ok = 0;
            let mut worst = 0.0f64;
            let probes: Vec<usize> = (0..n.min(40)).map(|_| rng.gen_range(0..n)).collect();
            for &e in &probes {
                let (ok, sim) = self_rank(&memory, e, &memory.entry(e).embedding);
                worst = worst.max((sim - 1.0).abs());
                self_ok += ok as usize;
            }
            (checks, matches, probes.len(), self_ok, worst)
        })
        .collect();

    let (checks, matches) = results.iter().fold((0, 0), |a, r| (a.0 + r.0, a.1 + r.1));
    let (probes, self_ok) = results.iter().fold((0, 0), |a, r| (a.0 + r.2, a.1 + r.3));
    let mut worst = results.iter().map(|r| r.4).fold(0.0, f64::max);

    // segments encoded by the real encoder
    let config = PipelineConfig::default();
    let pairs = corpus_pairs(60, 21, &config);
    let memory = build_memory(&pairs).unwrap();
    let mut real_ok = 0;
    for e in 0..memory.len() {
        let (ok, sim) = self_rank(&memory, e, &encode(&memory.entry(e).melody));
        worst = worst.max((sim - 1.0).abs());
        real_ok += ok as usize;
    }

    Outcome::new(
        matches == checks && self_ok == probes && real_ok == memory.len() && worst <= 1e-9,
        format!(
            "sizes 1..1000: {matches}/{checks} top-k lists equal brute force; self-retrieval first {self_ok}/{probes} random, {real_ok}/{} encoded; max |sim - 1| = {worst:.1e}",
            memory.len()
        ),
    )
}

fn corpus_pairs(songs: usize, seed: u64, config: &PipelineConfig) -> Vec<SegmentedPair> {
    generate_synthetic_corpus(songs, seed)
        .iter()
        .flat_map(|s| segment(s, config.window_bars, config.hop_bars).unwrap())
        .collect()
}

// ---- metrics ----

fn random_pair(rng: &mut ChaCha8Rng) -> (MelodySegment, ChordProgression) {
    let bars = rng.gen_range(2..=8u32);
    let slot = [1i64, 2, 4][rng.gen_range(0..3)];
    let total = bars as i64 * 4;
    let mut notes = Vec::new();
    let mut t = 0i64;
    while t < total * 2 {
        let d = rng.gen_range(1..=4).min(total * 2 - t);
        if rng.gen_bool(0.85) {
            notes.push(MelodyNote::new(rng.gen_range(48..76), beats(t, 2), beats(d, 2)));
        }
        t += d;
    }
    if notes.is_empty() {
        notes.push(MelodyNote::new(60, Beats::from_integer(0), Beats::from_integer(1)));
    }
    let key = Key::new(PitchClass::new(rng.gen_range(0..12)), if rng.gen_bool(0.5) { Mode::Major } else { Mode::Minor });
    let melody = MelodySegment::new(notes, key, 4, bars, vec![]).unwrap();
    let chords = (0..total / slot).map(|_| chord(rng.gen_range(0..48))).collect();
    (melody, ChordProgression::new(chords, Beats::from_integer(slot), Beats::from_integer(0)).unwrap())
}

fn metric_oracles() -> Outcome {
    let mut che_worst = 0.0f64;
    for n in 1..=48usize {
        for reps in 1..=3 {
            let slots = (0..n * reps).map(|i| chord(i % n)).collect();
            let p = ChordProgression::new(slots, Beats::from_integer(2), Beats::from_integer(0)).unwrap();
            che_worst = che_worst.max((che(&p).unwrap() - (n as f64).ln()).abs());
        }
    }

    let centroid_worst = [1.0, 0.37, 12.0]
        .iter()
        .flat_map(|&w| tonal_centroid(&[w; 12]).unwrap())
        .fold(0.0f64, |a, x| a.max(x.abs()));

    let mut rng = ChaCha8Rng::seed_from_u64(0x3E7);
    let mut trans_worst = 0.0f64;
    for _ in 0..50 {
        let (melody, chords) = random_pair(&mut rng);
        let base = MetricReport::compute(&melody, &chords).unwrap();
        for k in 0..12 {
            let m = MetricReport::compute(&melody.transpose(k).unwrap(), &chords.transpose(k)).unwrap();
            for (a, b) in [
                (base.che, m.che),
                (base.cc, m.cc),
                (base.ctd, m.ctd),
                (base.pcs, m.pcs),
                (base.mctd, m.mctd),
                (base.ctnctr, m.ctnctr),
            ] {
                trans_worst = trans_worst.max((a - b).abs());
            }
        }
    }

    let c_major = ChordProgression::new(vec!["C:maj".parse().unwrap()], Beats::from_integer(4), Beats::from_integer(0)).unwrap();
    let bar = |notes: &[(u8, i64)]| {
        let notes = notes
            .iter()
            .map(|&(p, on)| MelodyNote::new(p, Beats::from_integer(on), Beats::from_integer(1)))
            .collect();
        MelodySegment::new(notes, Key::major(0), 4, 1, vec![]).unwrap()
    };
    let examples = [
        (bar(&[(60, 0), (64, 1), (67, 2)]), 1.0),
        (bar(&[(60, 0), (62, 1)]), 0.5),
        (bar(&[(60, 0), (62, 1), (64, 2)]), 1.0),
    ];
    let ctnctr_ok = examples.iter().all(|(m, want)| ctnctr(m, &c_major).unwrap() == *want);

    Outcome::new(
        che_worst <= 1e-12 && centroid_worst <= 1e-9 && trans_worst <= 1e-9 && ctnctr_ok,
        format!(
            "|CHE - ln n| <= {che_worst:.1e}; uniform centroid norm-inf {centroid_worst:.1e}; 50 segments x 12 transpositions max drift {trans_worst:.1e}; CTnCTR examples exact: {ctnctr_ok}"
        ),
    )
}

// ---- pipeline ----

fn feasibility() -> Outcome {
    let config = PipelineConfig::default();
    let songs = generate_synthetic_corpus(1200, 31);
    let (memory, queries) = prepare_experiment(&songs, &config, Some(500)).unwrap();
    let threshold = config.edit.tonal_hard_threshold;
    let per_query: Vec<Result<(usize, usize, usize), String>> = queries
        .par_iter()
        .map(|q| {
            let result = harmonize(&q.melody, &memory, &config).map_err(|e| e.to_string())?;
            let edit = &result.selected.edit;
            let content = slot_melodies(&edit.chords, &q.melody);
            let mut violations = 0;
            for (t, &c) in edit.chords.slots().iter().enumerate() {
                if !content[t].is_empty()
                    && tonal_alignment_cost(c, &content[t]) > threshold
                    && !edit.relaxed_slots.contains(&t)
                {
                    violations += 1;
                }
            }
            Ok((violations, edit.relaxed_slots.len(), edit.chords.len()))
        })
        .collect();
    let failures = per_query.iter().filter(|r| r.is_err()).count();
    let (violations, relaxed, slots) = per_query
        .iter()
        .flatten()
        .fold((0, 0, 0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2));
    Outcome::new(
        queries.len() == 500 && failures == 0 && violations == 0,
        format!(
            "{} segments, {failures} failures, {violations} unmasked violations; relaxed-slot rate {:.3} per mille ({relaxed}/{slots})",
            queries.len(),
            1000.0 * relaxed as f64 / slots.max(1) as f64
        ),
    )
}

fn ablation_directionality() -> Outcome {
    let seeds = [1u64, 2, 3];
    let mut lines = Vec::new();
    let (mut editor_ok, mut diversity_ok, mut random_ok) = (0, 0, 0);
    for &seed in &seeds {
        let config = PipelineConfig {
            seed,
            ..PipelineConfig::default()
        };
        let songs = generate_synthetic_corpus(1200, seed);
        let (memory, queries) = prepare_experiment(&songs, &config, Some(500)).unwrap();
        let evals = run_ablation_suite(&queries, &memory, &config).unwrap();
        let get = |a: Ablation| -> &Evaluation { evals.iter().find(|e| e.variant == a).unwrap() };
        let full = &get(Ablation::Full).system;
        let no_editor = &get(Ablation::NoEditor).system;
        let no_retrieval = &get(Ablation::NoRetrieval).system;
        let random = &get(Ablation::Random).system;

        let e = no_editor.pcs < full.pcs;
        let d = no_retrieval.che < full.che && no_retrieval.cc < full.cc;
        let r = evals
            .iter()
            .filter(|e| e.variant != Ablation::Random)
            .all(|e| random.pcs < e.system.pcs);
        editor_ok += e as usize;
        diversity_ok += d as usize;
        random_ok += r as usize;
        lines.push(format!(
            "seed {seed} ({} queries): PCS full {:.3} no_editor {:.3} random {:.3} [{}{}]; CHE/CC full {:.3}/{:.2} no_retrieval {:.3}/{:.2} [{}]",
            queries.len(),
            full.pcs,
            no_editor.pcs,
            random.pcs,
            if e { "editor ok" } else { "editor FAIL" },
            if r { ", random worst ok" } else { ", random worst FAIL" },
            full.che,
            full.cc,
            no_retrieval.che,
            no_retrieval.cc,
            if d { "diversity ok" } else { "diversity FAIL" },
        ));
    }
    let n = seeds.len();
    Outcome::new(
        editor_ok == n && diversity_ok == n && random_ok == n,
        format!(
            "no_editor worse PCS {editor_ok}/{n} seeds; no_retrieval lower CHE and CC {diversity_ok}/{n}; random worst PCS {random_ok}/{n}\n        {}",
            lines.join("\n        ")
        ),
    )
}

fn scratch_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rer-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn determinism() -> Outcome {
    let dir = scratch_dir();
    let run = |name: &str, threads: Option<&str>| -> Result<Vec<u8>, String> {
        let out = dir.join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_rer"));
        cmd.env("RUST_LOG", "warn").args(["--seed", "5"]);
        if let Some(t) = threads {
            cmd.args(["--threads", t]);
        }
        cmd.args(["ablate", "--synthetic", "400", "--queries", "80", "--csv"]).arg(&out);
        let status = cmd.output().map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        fs::read(&out).map_err(|e| e.to_string())
    };
    let runs: Result<Vec<Vec<u8>>, String> = [
        ("a.csv", None),
        ("b.csv", None),
        ("t1.csv", Some("1")),
        ("t8.csv", Some("8")),
    ]
    .iter()
    .map(|&(n, t)| run(n, t))
    .collect();
    let _ = fs::remove_dir_all(&dir);
    match runs {
        Err(e) => Outcome::new(false, format!("rer ablate failed: {e}")),
        Ok(r) => {
            let same = r.windows(2).all(|w| w[0] == w[1]);
            Outcome::new(
                same && !r[0].is_empty(),
                format!(
                    "4 runs of `rer ablate` (default x2, --threads 1, --threads 8): {} bytes each, identical: {same}",
                    r[0].len()
                ),
            )
        }
    }
}

// ---- ingestion ----

fn smf(division: u16, tracks: &[&[u8]]) -> Vec<u8> {
    let mut out = b"MThd".to_vec();
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&(if tracks.len() > 1 { 1u16 } else { 0 }).to_be_bytes());
    out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    for t in tracks {
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(t.len() as u32).to_be_bytes());
        out.extend_from_slice(t);
    }
    out
}

fn note(pitch: u8, onset: Beats, duration: Beats) -> MelodyNote {
    MelodyNote::new(pitch, onset, duration)
}

fn ingestion() -> Outcome {
    let one = Beats::from_integer;
    let fixtures: Vec<(&str, Vec<u8>, Vec<MelodyNote>, u32)> = vec![
        (
            "single note",
            smf(480, &[&[0x00, 0x90, 0x3C, 0x40, 0x83, 0x60, 0x80, 0x3C, 0x40, 0x00, 0xFF, 0x2F, 0x00]]),
            vec![note(60, one(0), one(1))],
            4,
        ),
        (
            "two-track",
            smf(
                96,
                &[
                    &[
                        0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, 0x00, 0xFF, 0x58, 0x04, 0x03, 0x02, 0x18, 0x08, 0x00,
                        0xFF, 0x2F, 0x00,
                    ],
                    &[
                        0x00, 0xFF, 0x03, 0x04, b'L', b'e', b'a', b'd', 0x00, 0x90, 0x3C, 0x50, 0x60, 0x80, 0x3C,
                        0x00, 0x00, 0x90, 0x40, 0x50, 0x60, 0x80, 0x40, 0x00, 0x00, 0x90, 0x43, 0x50, 0x81, 0x40,
                        0x80, 0x43, 0x00, 0x00, 0xFF, 0x2F, 0x00,
                    ],
                ],
            ),
            vec![note(60, one(0), one(1)), note(64, one(1), one(1)), note(67, one(2), one(2))],
            3,
        ),
        (
            "running status",
            smf(
                480,
                &[&[
                    0x00, 0x90, 0x3C, 0x50, 0x83, 0x60, 0x3C, 0x00, 0x00, 0x3E, 0x50, 0x83, 0x60, 0x3E, 0x00, 0x00,
                    0x40, 0x50, 0x81, 0x70, 0x80, 0x40, 0x00, 0x00, 0x3E, 0x00, 0x00, 0xFF, 0x2F, 0x00,
                ]],
            ),
            vec![note(60, one(0), one(1)), note(62, one(1), one(1)), note(64, one(2), beats(1, 2))],
            4,
        ),
        (
            "1-3 byte deltas",
            smf(
                96,
                &[&[
                    0x00, 0x90, 0x3C, 0x40, 0x40, 0x80, 0x3C, 0x00, 0x81, 0x00, 0x90, 0x3E, 0x40, 0x81, 0x80, 0x00,
                    0x80, 0x3E, 0x00, 0x00, 0xFF, 0x2F, 0x00,
                ]],
            ),
            vec![note(60, one(0), beats(2, 3)), note(62, one(2), beats(512, 3))],
            4,
        ),
    ];
    let mut passed = 0;
    let mut failed = Vec::new();
    for (name, bytes, want, bpb) in &fixtures {
        match parse_smf(bytes) {
            Ok(song) if song.melody.notes() == want.as_slice() && song.melody.beats_per_bar() == *bpb => passed += 1,
            Ok(song) => failed.push(format!("{name}: got {:?}", song.melody.notes())),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }

    let songs = generate_synthetic_corpus(200, 17);
    let text = songs_to_corpus_json(&songs);
    let round_trip = match parse_corpus_json(&text) {
        Ok(parsed) => parsed == songs && songs_to_corpus_json(&parsed) == text,
        Err(_) => false,
    };

    Outcome::new(
        failed.is_empty() && round_trip,
        format!(
            "SMF fixtures {passed}/{} exact{}; 200-song synthetic corpus JSON round trip bit-exact: {round_trip}",
            fixtures.len(),
            if failed.is_empty() { String::new() } else { format!(" ({})", failed.join("; ")) }
        ),
    )
}

// ---- persistence ----

fn memory_persistence() -> Outcome {
    let config = PipelineConfig::default();
    let mut pairs = corpus_pairs(500, 41, &config);
    pairs.truncate(1000);
    let memory = build_memory(&pairs).unwrap();
    let bytes = memory_to_bytes(&memory);
    let in_memory = memory_from_bytes(&bytes).map(|m| m == memory).unwrap_or(false);
    let path = scratch_dir().join("memory.rerm");
    save_memory(&memory, &path).unwrap();
    let on_disk = load_memory(&path).map(|m| m == memory).unwrap_or(false);
    let _ = fs::remove_dir_all(path.parent().unwrap());

    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = bytes.clone();
        f(&mut b);
        memory_from_bytes(&b)
    };
    let bad_version = FORMAT_VERSION + 1;
    let cases: Vec<(&str, bool)> = vec![
        ("bad magic", matches!(corrupt(&|b| b[0] ^= 0xFF), Err(MemoryError::BadMagic))),
        ("empty", matches!(corrupt(&|b| b.clear()), Err(MemoryError::BadMagic))),
        (
            "version",
            matches!(
                corrupt(&|b| b[4..6].copy_from_slice(&bad_version.to_le_bytes())),
                Err(MemoryError::VersionMismatch { found, .. }) if found == bad_version
            ),
        ),
        ("truncated body", matches!(corrupt(&|b| b.truncate(b.len() / 2)), Err(MemoryError::Truncated(_)))),
        ("truncated checksum", matches!(corrupt(&|b| b.truncate(b.len() - 1)), Err(MemoryError::Truncated(_)))),
        (
            "payload flip",
            matches!(corrupt(&|b| { let i = b.len() / 3; b[i] ^= 0x01 }), Err(MemoryError::Checksum | MemoryError::Corrupt(_))),
        ),
        ("checksum flip", matches!(corrupt(&|b| { let i = b.len() - 1; b[i] ^= 0x80 }), Err(MemoryError::Checksum))),
        ("trailing bytes", matches!(corrupt(&|b| b.push(0)), Err(MemoryError::Corrupt(_)))),
    ];
    let bad: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome::new(
        memory.len() == 1000 && in_memory && on_disk && bad.is_empty(),
        format!(
            "{}-entry round trip equal: bytes {in_memory}, file {on_disk}; corruption fixtures {}/{} raise the expected error{}",
            memory.len(),
            cases.len() - bad.len(),
            cases.len(),
            if bad.is_empty() { String::new() } else { format!(" (wrong: {})", bad.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("viterbi optimality", viterbi_oracle),
        ("score algebra", score_algebra),
        ("retrieval exactness", retrieval_exactness),
        ("metric oracles", metric_oracles),
        ("feasibility", feasibility),
        ("ablation directionality", ablation_directionality),
        ("determinism", determinism),
        ("ingestion", ingestion),
        ("memory persistence", memory_persistence),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        failures += !outcome.pass as usize;
        println!(
            "{} {name} [{:.1}s]: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
