//! HTTP/JSON API over the harmonization pipeline.
//!
//! | method | path             | body                                           |
//! |--------|------------------|------------------------------------------------|
//! | GET    | `/api/health`    |                                                |
//! | GET    | `/api/config`    |                                                |
//! | PUT    | `/api/config`    | partial config object, merged and validated    |
//! | POST   | `/api/memory`    | `{"path": ...}` or `{"corpus": [songs]}`       |
//! | POST   | `/api/harmonize` | `{"melody": song, "config": {overrides}}`      |
//! | POST   | `/api/export`    | `{"melody": song, "chords": [...], "format"}`  |
//!
//! Melodies use the corpus JSON song schema; `id` may be omitted.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use rer_core::ingest::{parse_corpus_json, parse_song_value, segment, songs_to_corpus_json, write_smf, Song};
use rer_core::memory::{build_memory, memory_from_bytes, Memory, MAGIC};
use rer_core::music::{Beats, ChordProgression, ChordSymbol};
use rer_core::pipeline::{harmonization_json, harmonize, PipelineConfig, PipelineError};

#[derive(Debug, Default)]
pub struct SessionState {
    memory: RwLock<Option<Arc<Memory>>>,
    config: RwLock<PipelineConfig>,
    requests: AtomicU64,
}

pub type SharedState = Arc<SessionState>;

impl SessionState {
    pub fn new(config: PipelineConfig, memory: Option<Memory>) -> SharedState {
        Arc::new(SessionState {
            memory: RwLock::new(memory.map(Arc::new)),
            config: RwLock::new(config),
            requests: AtomicU64::new(0),
        })
    }

    pub fn memory(&self) -> Option<Arc<Memory>> {
        self.memory.read().expect("memory lock").clone()
    }

    pub fn config(&self) -> PipelineConfig {
        self.config.read().expect("config lock").clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body(body: &Bytes) -> ApiResult<Map<String, Value>> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::bad_request("request body must be a JSON object")),
        Err(e) => Err(ApiError::bad_request(format!("malformed JSON: {e}"))),
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Applies a partial JSON object to `config`; nothing changes on error.
pub fn apply_overrides(config: &PipelineConfig, patch: &Value) -> Result<PipelineConfig, String> {
    if !patch.is_object() {
        return Err("config must be a JSON object".into());
    }
    let mut v = serde_json::to_value(config).map_err(|e| e.to_string())?;
    merge(&mut v, patch);
    let c: PipelineConfig = serde_json::from_value(v).map_err(|e| e.to_string())?;
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn parse_melody(body: &Map<String, Value>) -> ApiResult<Song> {
    let mut m = body
        .get("melody")
        .cloned()
        .ok_or_else(|| ApiError::bad_request("missing field \"melody\""))?;
    if let Value::Object(o) = &mut m {
        o.entry("id").or_insert_with(|| json!("query"));
        if o.get("notes").and_then(Value::as_array).is_some_and(|n| n.is_empty()) {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "melody has no notes"));
        }
    }
    parse_song_value(&m, "$.melody").map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn health(State(state): State<SharedState>) -> Json<Value> {
    let memory = state.memory();
    Json(json!({
        "status": "ok",
        "memory_loaded": memory.is_some(),
        "entries": memory.as_ref().map(|m| m.len()),
        "requests": state.requests.load(Ordering::Relaxed),
    }))
}

async fn get_config(State(state): State<SharedState>) -> Json<PipelineConfig> {
    Json(state.config())
}

async fn put_config(State(state): State<SharedState>, body: Bytes) -> ApiResult<Json<PipelineConfig>> {
    let patch = Value::Object(parse_body(&body)?);
    let mut guard = state.config.write().expect("config lock");
    let next = apply_overrides(&guard, &patch).map_err(ApiError::bad_request)?;
    *guard = next.clone();
    Ok(Json(next))
}

fn build_from_songs(songs: &[Song], config: &PipelineConfig) -> ApiResult<Memory> {
    let mut pairs = Vec::new();
    for s in songs {
        pairs.extend(segment(s, config.window_bars, config.hop_bars).map_err(|e| ApiError::bad_request(e.to_string()))?);
    }
    build_memory(&pairs).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}

fn load_path(path: &Path, config: &PipelineConfig) -> ApiResult<(Memory, Option<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| {
        let status = if e.kind() == std::io::ErrorKind::NotFound {
            StatusCode::NOT_FOUND
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError::new(status, format!("{}: {e}", path.display()))
    })?;
    if bytes.starts_with(MAGIC) {
        let m = memory_from_bytes(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
        return Ok((m, None));
    }
    let text = String::from_utf8(bytes).map_err(|_| ApiError::bad_request("corpus file is not UTF-8"))?;
    let songs = parse_corpus_json(&text).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok((build_from_songs(&songs, config)?, Some(songs.len())))
}

async fn post_memory(State(state): State<SharedState>, body: Bytes) -> ApiResult<Json<Value>> {
    let body = parse_body(&body)?;
    let config = state.config();
    let (memory, songs) = if let Some(p) = body.get("path") {
        let p = p.as_str().ok_or_else(|| ApiError::bad_request("\"path\" must be a string"))?;
        let path = PathBuf::from(p);
        tokio::task::spawn_blocking(move || load_path(&path, &config))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
    } else if let Some(c) = body.get("corpus") {
        let text = c.to_string();
        tokio::task::spawn_blocking(move || {
            let songs = parse_corpus_json(&text).map_err(|e| ApiError::bad_request(e.to_string()))?;
            Ok::<_, ApiError>((build_from_songs(&songs, &config)?, Some(songs.len())))
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
    } else {
        return Err(ApiError::bad_request("expected \"path\" or \"corpus\""));
    };
    let summary = json!({
        "entries": memory.len(),
        "skipped": memory.metadata().skipped,
        "songs": songs,
        "corpus_hash": memory.metadata().corpus_hash_hex(),
        "encoder_version": memory.metadata().encoder_version,
    });
    *state.memory.write().expect("memory lock") = Some(Arc::new(memory));
    Ok(Json(summary))
}

async fn post_harmonize(State(state): State<SharedState>, body: Bytes) -> ApiResult<Json<Value>> {
    let body = parse_body(&body)?;
    let song = parse_melody(&body)?;
    let config = match body.get("config") {
        None | Some(Value::Null) => state.config(),
        Some(patch) => apply_overrides(&state.config(), patch).map_err(ApiError::bad_request)?,
    };
    let memory = state
        .memory()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no memory loaded"))?;
    if song.melody.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "melody has no notes"));
    }
    let request = state.requests.fetch_add(1, Ordering::Relaxed) + 1;
    let result = tokio::task::spawn_blocking(move || {
        harmonize(&song.melody, &memory, &config).map(|r| (harmonization_json(&r, &config), song))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let (mut payload, song) = result.map_err(|e| match e {
        PipelineError::EmptyMelody | PipelineError::Memory(_) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
        }
        e => ApiError::bad_request(e.to_string()),
    })?;
    payload["request"] = json!(request);
    payload["num_bars"] = json!(song.melody.num_bars());
    payload["beats_per_bar"] = json!(song.melody.beats_per_bar());
    payload["key"] = json!({"tonic": song.melody.key().tonic.value(), "mode": song.melody.key().mode.as_str()});
    Ok(Json(payload))
}

fn parse_beats_field(v: Option<&Value>) -> ApiResult<Option<Beats>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_i64()
            .filter(|&i| i > 0)
            .map(|i| Some(Beats::from_integer(i)))
            .ok_or_else(|| ApiError::bad_request("\"slot_beats\" must be a positive integer or \"n/d\"")),
        Some(Value::String(s)) => {
            let (n, d) = s.split_once('/').unwrap_or((s, "1"));
            match (n.trim().parse::<i64>(), d.trim().parse::<i64>()) {
                (Ok(n), Ok(d)) if n > 0 && d > 0 => Ok(Some(Beats::new(n, d))),
                _ => Err(ApiError::bad_request("\"slot_beats\" must be a positive integer or \"n/d\"")),
            }
        }
        Some(_) => Err(ApiError::bad_request("\"slot_beats\" must be a positive integer or \"n/d\"")),
    }
}

async fn post_export(body: Bytes) -> ApiResult<Response> {
    let body = parse_body(&body)?;
    let mut song = parse_melody(&body)?;
    if let Some(chords) = body.get("chords") {
        let symbols = chords
            .as_array()
            .ok_or_else(|| ApiError::bad_request("\"chords\" must be an array of chord symbols"))?
            .iter()
            .map(|c| {
                c.as_str()
                    .and_then(|s| s.parse::<ChordSymbol>().ok())
                    .ok_or_else(|| ApiError::bad_request(format!("bad chord symbol {c}")))
            })
            .collect::<ApiResult<Vec<_>>>()?;
        let slot = match parse_beats_field(body.get("slot_beats"))? {
            Some(b) => b,
            None if !symbols.is_empty() => song.melody.total_beats() / Beats::from_integer(symbols.len() as i64),
            None => return Err(ApiError::bad_request("\"chords\" is empty")),
        };
        song.chords =
            Some(ChordProgression::new(symbols, slot, Beats::from_integer(0)).map_err(|e| ApiError::bad_request(e.to_string()))?);
    }
    match body.get("format").and_then(Value::as_str).unwrap_or("json") {
        "json" => Ok((
            [(header::CONTENT_TYPE, "application/json")],
            songs_to_corpus_json(std::slice::from_ref(&song)),
        )
            .into_response()),
        "smf" | "midi" => Ok(([(header::CONTENT_TYPE, "audio/midi")], write_smf(&song, 480)).into_response()),
        other => Err(ApiError::bad_request(format!("unknown export format \"{other}\""))),
    }
}

/// The API router, optionally serving a static UI bundle for other paths.
pub fn router(state: SharedState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/memory", post(post_memory))
        .route("/api/harmonize", post(post_harmonize))
        .route("/api/export", post(post_export))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: &str, state: SharedState, static_dir: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}
