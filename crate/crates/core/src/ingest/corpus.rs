//! JSON corpus format.
//!
//! ```json
//! [{"id": "song-1", "beats_per_bar": 4,
//!   "key": {"tonic": 0, "mode": "major"},
//!   "phrases": [0, 4, 8],
//!   "notes": [{"pitch": 60, "onset": 0, "dur": "1/2"}],
//!   "chords": [{"symbol": "C:maj", "start_beat": 0, "dur_beats": 4}]}]
//! ```
//!
//! Beat values are JSON numbers or `"num/den"` strings. `key`, `phrases`,
//! `chords`, `num_bars` and `metadata` are optional.

use std::collections::BTreeMap;

use num_traits::Zero;
use serde_json::{json, Map, Value};

use super::{bars_covering, detect_key, grid_from_timed_chords, IngestError, Song, TimedChord};
use crate::music::{
    default_phrase_boundaries, format_beats, Beats, ChordSymbol, Key, MelodyNote, MelodySegment, Mode,
    PitchClass,
};

fn schema(path: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, name: &str) -> Result<&'a Value, IngestError> {
    obj.get(name)
        .ok_or_else(|| schema(path, format!("missing field \"{name}\"")))
}

fn as_uint(v: &Value, path: &str, max: u64) -> Result<u64, IngestError> {
    v.as_u64()
        .filter(|&x| x <= max)
        .ok_or_else(|| schema(path, format!("expected integer in 0..={max}, found {v}")))
}

fn parse_beats(v: &Value, path: &str) -> Result<Beats, IngestError> {
    let bad = || schema(path, format!("expected a number or \"num/den\", found {v}"));
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Beats::from_integer(i))
            } else {
                n.as_f64()
                    .filter(|f| f.is_finite())
                    .and_then(Beats::approximate_float)
                    .ok_or_else(bad)
            }
        }
        Value::String(s) => {
            let (num, den) = match s.split_once('/') {
                Some((a, b)) => (a.trim().parse::<i64>(), b.trim().parse::<i64>()),
                None => (s.trim().parse::<i64>(), Ok(1)),
            };
            match (num, den) {
                (Ok(n), Ok(d)) if d > 0 => Ok(Beats::new(n, d)),
                _ => Err(bad()),
            }
        }
        _ => Err(bad()),
    }
}

fn beats_value(b: Beats) -> Value {
    if b.is_integer() {
        json!(b.to_integer())
    } else {
        Value::String(format_beats(b))
    }
}

fn parse_song(v: &Value, path: &str) -> Result<Song, IngestError> {
    let obj = v
        .as_object()
        .ok_or_else(|| schema(path, "expected an object"))?;
    let id = field(obj, path, "id")?
        .as_str()
        .ok_or_else(|| schema(format!("{path}.id"), "expected a string"))?
        .to_string();
    let bpb_path = format!("{path}.beats_per_bar");
    let beats_per_bar = as_uint(field(obj, path, "beats_per_bar")?, &bpb_path, 64)? as u32;
    if beats_per_bar == 0 {
        return Err(schema(bpb_path, "must be positive"));
    }

    let key = match obj.get("key") {
        None | Some(Value::Null) => None,
        Some(k) => {
            let kp = format!("{path}.key");
            let ko = k.as_object().ok_or_else(|| schema(&kp, "expected an object"))?;
            let tonic = as_uint(field(ko, &kp, "tonic")?, &format!("{kp}.tonic"), 11)?;
            let mode = match field(ko, &kp, "mode")?.as_str() {
                Some("major") => Mode::Major,
                Some("minor") => Mode::Minor,
                _ => return Err(schema(format!("{kp}.mode"), "expected \"major\" or \"minor\"")),
            };
            Some(Key::new(PitchClass::new(tonic as i32), mode))
        }
    };

    let notes_path = format!("{path}.notes");
    let notes_v = field(obj, path, "notes")?
        .as_array()
        .ok_or_else(|| schema(&notes_path, "expected an array"))?;
    let mut notes = Vec::with_capacity(notes_v.len());
    for (i, n) in notes_v.iter().enumerate() {
        let np = format!("{notes_path}[{i}]");
        let no = n.as_object().ok_or_else(|| schema(&np, "expected an object"))?;
        let pitch = as_uint(field(no, &np, "pitch")?, &format!("{np}.pitch"), 127)? as u8;
        let onset = parse_beats(field(no, &np, "onset")?, &format!("{np}.onset"))?;
        let dur = parse_beats(field(no, &np, "dur")?, &format!("{np}.dur"))?;
        if onset < Beats::zero() {
            return Err(schema(format!("{np}.onset"), "must be non-negative"));
        }
        if dur <= Beats::zero() {
            return Err(schema(format!("{np}.dur"), "must be positive"));
        }
        notes.push(MelodyNote::new(pitch, onset, dur));
    }

    let mut timed = Vec::new();
    if let Some(cv) = obj.get("chords").filter(|v| !v.is_null()) {
        let cpath = format!("{path}.chords");
        let arr = cv.as_array().ok_or_else(|| schema(&cpath, "expected an array"))?;
        for (i, c) in arr.iter().enumerate() {
            let cp = format!("{cpath}[{i}]");
            let co = c.as_object().ok_or_else(|| schema(&cp, "expected an object"))?;
            let text = field(co, &cp, "symbol")?
                .as_str()
                .ok_or_else(|| schema(format!("{cp}.symbol"), "expected a string"))?;
            let symbol: ChordSymbol = text.parse().map_err(|_| IngestError::UnknownChord {
                path: format!("{cp}.symbol"),
                symbol: text.to_string(),
            })?;
            let start = parse_beats(field(co, &cp, "start_beat")?, &format!("{cp}.start_beat"))?;
            let duration = parse_beats(field(co, &cp, "dur_beats")?, &format!("{cp}.dur_beats"))?;
            if start < Beats::zero() {
                return Err(schema(format!("{cp}.start_beat"), "must be non-negative"));
            }
            if duration <= Beats::zero() {
                return Err(schema(format!("{cp}.dur_beats"), "must be positive"));
            }
            timed.push(TimedChord { symbol, start, duration, path: cp });
        }
    }

    let note_end = notes.iter().map(|n| n.end()).max().unwrap_or_else(Beats::zero);
    let chord_end = timed.iter().map(|c| c.start + c.duration).max().unwrap_or_else(Beats::zero);
    let mut num_bars = bars_covering(note_end.max(chord_end), beats_per_bar);
    if let Some(nb) = obj.get("num_bars").filter(|v| !v.is_null()) {
        let declared = as_uint(nb, &format!("{path}.num_bars"), u32::MAX as u64)? as u32;
        if declared < num_bars {
            return Err(schema(
                format!("{path}.num_bars"),
                format!("{declared} bars do not cover the content ({num_bars} needed)"),
            ));
        }
        num_bars = declared;
    }
    let total = Beats::from_integer(num_bars as i64 * beats_per_bar as i64);
    let chords = grid_from_timed_chords(&mut timed, total)?;

    let phrases = match obj.get("phrases").filter(|v| !v.is_null()) {
        None => default_phrase_boundaries(num_bars),
        Some(p) => {
            let pp = format!("{path}.phrases");
            let arr = p.as_array().ok_or_else(|| schema(&pp, "expected an array"))?;
            arr.iter()
                .enumerate()
                .map(|(i, b)| as_uint(b, &format!("{pp}[{i}]"), num_bars as u64).map(|x| x as u32))
                .collect::<Result<Vec<_>, _>>()?
        }
    };

    let key = match key {
        Some(k) => k,
        None => detect_key(&notes)?,
    };

    let metadata = match obj.get("metadata").filter(|v| !v.is_null()) {
        None => BTreeMap::new(),
        Some(m) => {
            let mp = format!("{path}.metadata");
            let mo = m.as_object().ok_or_else(|| schema(&mp, "expected an object"))?;
            mo.iter()
                .map(|(k, v)| {
                    v.as_str()
                        .map(|s| (k.clone(), s.to_string()))
                        .ok_or_else(|| schema(format!("{mp}.{k}"), "expected a string"))
                })
                .collect::<Result<_, _>>()?
        }
    };

    let melody = MelodySegment::new(notes, key, beats_per_bar, num_bars, phrases)
        .map_err(|e| schema(path, e.to_string()))?;
    Ok(Song { id, melody, chords, metadata })
}

/// Parses a corpus document (a JSON array of songs).
pub fn parse_corpus_json(text: &str) -> Result<Vec<Song>, IngestError> {
    let doc: Value = serde_json::from_str(text)?;
    let arr = doc
        .as_array()
        .ok_or_else(|| schema("$", "expected a top-level array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| parse_song(v, &format!("$[{i}]")))
        .collect()
}

/// Parses one song object; errors are reported under `path`.
pub fn parse_song_value(v: &Value, path: &str) -> Result<Song, IngestError> {
    parse_song(v, path)
}

/// JSON value for one song; chords are written one entry per slot so the
/// slot grid survives a round trip.
pub fn song_to_value(song: &Song) -> Value {
    let m = &song.melody;
    let notes: Vec<Value> = m
        .notes()
        .iter()
        .map(|n| json!({"pitch": n.pitch, "onset": beats_value(n.onset), "dur": beats_value(n.duration)}))
        .collect();
    let mut obj = Map::new();
    obj.insert("id".into(), json!(song.id));
    obj.insert("beats_per_bar".into(), json!(m.beats_per_bar()));
    obj.insert("num_bars".into(), json!(m.num_bars()));
    obj.insert(
        "key".into(),
        json!({"tonic": m.key().tonic.value(), "mode": m.key().mode.as_str()}),
    );
    obj.insert("phrases".into(), json!(m.phrase_boundaries()));
    obj.insert("notes".into(), Value::Array(notes));
    if let Some(chords) = &song.chords {
        let cs: Vec<Value> = chords
            .slots()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                json!({
                    "symbol": c.to_string(),
                    "start_beat": beats_value(chords.slot_start(i)),
                    "dur_beats": beats_value(chords.slot_duration()),
                })
            })
            .collect();
        obj.insert("chords".into(), Value::Array(cs));
    }
    if !song.metadata.is_empty() {
        obj.insert("metadata".into(), json!(song.metadata));
    }
    Value::Object(obj)
}

/// Serializes songs to the corpus format.
pub fn songs_to_corpus_json(songs: &[Song]) -> String {
    let arr = Value::Array(songs.iter().map(song_to_value).collect());
    serde_json::to_string_pretty(&arr).expect("corpus values are always serializable")
}
