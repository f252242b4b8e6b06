use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rer_core::ingest::{parse_corpus_json, parse_smf, segment, songs_to_corpus_json, write_smf, SegmentedPair, Song};
use rer_core::memory::{build_memory, load_memory, save_memory};
use rer_core::pipeline::{
    ablation_csv, ablation_table, evaluate, evaluation_csv, generate_synthetic_corpus, grid_search_lambda,
    harmonization_json, harmonize, prepare_experiment, run_ablation_suite, Ablation, PipelineConfig,
};
use rer_service::SessionState;

#[derive(Parser)]
#[command(name = "rer", version, about = "Melody harmonization by retrieval, editing and reranking")]
struct Cli {
    /// Pipeline config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusSource {
    /// Corpus JSON files or Standard MIDI files.
    #[arg(long = "corpus", num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Generate this many synthetic songs instead of reading a corpus.
    #[arg(long, conflicts_with = "corpus")]
    synthetic: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a corpus and write a memory file.
    BuildMemory {
        #[command(flatten)]
        source: CorpusSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Harmonize one melody (corpus JSON with one song, or SMF).
    Harmonize {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        melody: PathBuf,
        /// Pipeline variant; defaults to the config's.
        #[arg(long)]
        variant: Option<Ablation>,
        /// Result JSON path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write melody plus selected chords as SMF.
        #[arg(long)]
        smf: Option<PathBuf>,
    },
    /// Harmonize every segment of a corpus and score against its chords.
    Evaluate {
        #[arg(long)]
        memory: PathBuf,
        #[command(flatten)]
        source: CorpusSource,
        #[arg(long)]
        variant: Option<Ablation>,
        #[arg(long)]
        max_queries: Option<usize>,
        /// Per-segment CSV path (default: stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run all five pipeline variants on a held-out split and tabulate.
    Ablate {
        #[command(flatten)]
        source: CorpusSource,
        #[arg(long, default_value_t = 500)]
        queries: usize,
        /// CSV path (default: stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic corpus as JSON.
    SynthCorpus {
        #[arg(long, default_value_t = 100)]
        songs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick lambda by grid search on a held-out split.
    GridLambda {
        #[command(flatten)]
        source: CorpusSource,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        queries: usize,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Memory file or corpus JSON to load at startup.
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Directory with a static UI bundle.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn read_songs(paths: &[PathBuf]) -> Result<Vec<Song>> {
    let mut songs = Vec::new();
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        if bytes.starts_with(b"MThd") {
            let mut song = parse_smf(&bytes).with_context(|| format!("parsing {}", p.display()))?;
            song.id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            songs.push(song);
        } else {
            let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", p.display()))?;
            songs.extend(parse_corpus_json(&text).with_context(|| format!("parsing {}", p.display()))?);
        }
    }
    Ok(songs)
}

fn source_songs(source: &CorpusSource, seed: u64) -> Result<Vec<Song>> {
    match source.synthetic {
        Some(n) => Ok(generate_synthetic_corpus(n, seed)),
        None if source.corpus.is_empty() => bail!("give --corpus <files> or --synthetic <n>"),
        None => read_songs(&source.corpus),
    }
}

fn segments(songs: &[Song], config: &PipelineConfig) -> Result<Vec<SegmentedPair>> {
    let mut out = Vec::new();
    for s in songs {
        out.extend(segment(s, config.window_bars, config.hop_bars).with_context(|| format!("segmenting {}", s.id))?);
    }
    Ok(out)
}

fn write_output(path: Option<&Path>, data: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, data).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(data).context("writing stdout"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }

    match cli.command {
        Command::BuildMemory { source, out } => {
            let songs = source_songs(&source, config.seed)?;
            let memory = build_memory(&segments(&songs, &config)?)?;
            save_memory(&memory, &out)?;
            eprintln!(
                "{} entries from {} songs ({} silent segments skipped) -> {}",
                memory.len(),
                songs.len(),
                memory.metadata().skipped,
                out.display()
            );
        }
        Command::Harmonize {
            memory,
            melody,
            variant,
            out,
            smf,
        } => {
            if let Some(v) = variant {
                config.ablation = v;
            }
            let memory = load_memory(&memory).with_context(|| format!("loading {}", memory.display()))?;
            let mut songs = read_songs(&[melody])?;
            if songs.len() != 1 {
                bail!("melody file must hold exactly one song, found {}", songs.len());
            }
            let mut song = songs.remove(0);
            let result = harmonize(&song.melody, &memory, &config)?;
            let payload = harmonization_json(&result, &config);
            let mut text = serde_json::to_string_pretty(&payload)?;
            text.push('\n');
            write_output(out.as_deref(), text.as_bytes())?;
            if let Some(path) = smf {
                song.chords = Some(result.selected.edit.chords.clone());
                fs::write(&path, write_smf(&song, 480)).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Evaluate {
            memory,
            source,
            variant,
            max_queries,
            csv,
        } => {
            if let Some(v) = variant {
                config.ablation = v;
            }
            let memory = load_memory(&memory).with_context(|| format!("loading {}", memory.display()))?;
            let mut queries = segments(&source_songs(&source, config.seed)?, &config)?;
            if let Some(n) = max_queries {
                queries.truncate(n);
            }
            let eval = evaluate(&queries, &memory, &config)?;
            eprint!("{}", ablation_table(std::slice::from_ref(&eval)));
            eprintln!("failures: {}  relaxed-slot rate: {:.6}", eval.failures, eval.relaxed_rate());
            write_output(csv.as_deref(), evaluation_csv(&eval).as_bytes())?;
        }
        Command::Ablate { source, queries, csv } => {
            let songs = source_songs(&source, config.seed)?;
            let (memory, queries) = prepare_experiment(&songs, &config, Some(queries))?;
            eprintln!("memory: {} entries, queries: {}", memory.len(), queries.len());
            let evals = run_ablation_suite(&queries, &memory, &config)?;
            eprint!("{}", ablation_table(&evals));
            write_output(csv.as_deref(), ablation_csv(&evals).as_bytes())?;
        }
        Command::SynthCorpus { songs, out } => {
            if songs == 0 {
                bail!("--songs must be at least 1");
            }
            let mut text = songs_to_corpus_json(&generate_synthetic_corpus(songs, config.seed));
            text.push('\n');
            write_output(out.as_deref(), text.as_bytes())?;
        }
        Command::GridLambda { source, grid, queries } => {
            let songs = source_songs(&source, config.seed)?;
            let (memory, validation) = prepare_experiment(&songs, &config, Some(queries))?;
            let search = grid_search_lambda(&validation, &memory, &config, &grid)?;
            let mut text = serde_json::to_string_pretty(&search)?;
            text.push('\n');
            write_output(None, text.as_bytes())?;
            eprintln!("best lambda: {}", search.best_lambda);
        }
        Command::Serve {
            bind,
            memory,
            static_dir,
        } => {
            let memory = match memory {
                None => None,
                Some(p) => {
                    let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
                    if bytes.starts_with(rer_core::memory::MAGIC) {
                        Some(load_memory(&p)?)
                    } else {
                        Some(build_memory(&segments(&read_songs(&[p])?, &config)?)?)
                    }
                }
            };
            let state = SessionState::new(config, memory);
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(rer_service::serve(&bind, state, static_dir.as_deref()))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
