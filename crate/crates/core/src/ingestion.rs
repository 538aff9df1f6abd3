//! Query-log and embedding-file parsing.
//!
//! Both formats are UTF-8, one record per line, TAB-separated:
//!
//! ```text
//! event log:      <day>\t<query>\t<impression|click|atc>
//! embedding file: <query>\t<base64 payload>
//! ```
//!
//! Blank lines are ignored. In [`ParseMode::Lenient`] a malformed line is
//! recorded in the report and skipped; in [`ParseMode::Strict`] the first
//! malformed line aborts the parse.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{PayloadError, QuantizedEmbedding};
use crate::exec::Execution;
use crate::text::normalize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Impression,
    Click,
    Atc,
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "impression" => Ok(EventKind::Impression),
            "click" => Ok(EventKind::Click),
            "atc" => Ok(EventKind::Atc),
            other => Err(other.to_string()),
        }
    }
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Impression => "impression",
            EventKind::Click => "click",
            EventKind::Atc => "atc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawEvent {
    /// Whole days since the epoch.
    pub day: u32,
    pub query: String,
    pub kind: EventKind,
}

impl RawEvent {
    pub fn new(day: u32, query: &str, kind: EventKind) -> Self {
        Self { day, query: normalize(query), kind }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryStats {
    pub query: String,
    pub atc: u64,
    pub clicks: u64,
    pub impressions: u64,
}

impl QueryStats {
    pub fn new(query: &str, atc: u64, clicks: u64, impressions: u64) -> Self {
        Self { query: normalize(query), atc, clicks, impressions }
    }

    fn bump(&mut self, kind: EventKind) {
        match kind {
            EventKind::Atc => self.atc += 1,
            EventKind::Click => self.clicks += 1,
            EventKind::Impression => self.impressions += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFileEntry {
    pub query: String,
    pub payload: String,
    pub embedding: QuantizedEmbedding,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineErrorKind {
    #[error("expected {expected} tab-separated fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("invalid day timestamp {0:?}")]
    Timestamp(String),
    #[error("unknown event kind {0:?}")]
    Kind(String),
    #[error("query is empty after normalization")]
    EmptyQuery,
    #[error("bad embedding payload: {0}")]
    Payload(#[from] PayloadError),
    #[error("invalid number {0:?}")]
    Number(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {kind}")]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub kind: LineErrorKind,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("strict parse aborted: {0}")]
    Malformed(LineError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseReport<T> {
    pub records: Vec<T>,
    pub errors: Vec<LineError>,
    /// Records that replaced an earlier record for the same key.
    pub duplicates: usize,
}

impl<T> Default for ParseReport<T> {
    fn default() -> Self {
        Self { records: Vec::new(), errors: Vec::new(), duplicates: 0 }
    }
}

/// Reads non-blank lines with their 1-based line numbers.
pub(crate) fn numbered_lines<R: BufRead>(reader: R) -> Result<Vec<(usize, String)>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

/// Parses each line with `parse` (in parallel where enabled), then folds the
/// results in line order.
pub(crate) fn parse_lines<R, T, F>(
    reader: R,
    mode: ParseMode,
    exec: Execution,
    parse: F,
) -> Result<ParseReport<T>, IngestError>
where
    R: BufRead,
    T: Send,
    F: Fn(&str) -> Result<T, LineErrorKind> + Sync + Send,
{
    let lines = numbered_lines(reader)?;
    let parsed = exec.map(&lines, |(_, line)| parse(line));
    let mut report = ParseReport::default();
    for ((line, _), result) in lines.iter().zip(parsed) {
        match result {
            Ok(rec) => report.records.push(rec),
            Err(kind) => {
                let err = LineError { line: *line, kind };
                if mode == ParseMode::Strict {
                    return Err(IngestError::Malformed(err));
                }
                report.errors.push(err);
            }
        }
    }
    Ok(report)
}

pub(crate) fn split_fields(line: &str, expected: usize) -> Result<Vec<&str>, LineErrorKind> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(LineErrorKind::FieldCount { expected, found: fields.len() });
    }
    Ok(fields)
}

pub(crate) fn normalized_query(raw: &str) -> Result<String, LineErrorKind> {
    let q = normalize(raw);
    if q.is_empty() {
        Err(LineErrorKind::EmptyQuery)
    } else {
        Ok(q)
    }
}

fn parse_event_line(line: &str) -> Result<RawEvent, LineErrorKind> {
    let f = split_fields(line, 3)?;
    let day = f[0].trim().parse::<u32>().map_err(|_| LineErrorKind::Timestamp(f[0].to_string()))?;
    let query = normalized_query(f[1])?;
    let kind = f[2].parse().map_err(LineErrorKind::Kind)?;
    Ok(RawEvent { day, query, kind })
}

/// Parses a `day TAB query TAB kind` event log. Input order is preserved.
pub fn parse_event_log<R: BufRead>(reader: R, mode: ParseMode) -> Result<ParseReport<RawEvent>, IngestError> {
    parse_lines(reader, mode, Execution::default(), parse_event_line)
}

/// Counts events per normalized query over the days in `window`.
///
/// Output is sorted by query text.
pub fn aggregate_events(events: &[RawEvent], window: RangeInclusive<u32>) -> Vec<QueryStats> {
    let mut by_query: BTreeMap<String, QueryStats> = BTreeMap::new();
    for ev in events.iter().filter(|e| window.contains(&e.day)) {
        let key = normalize(&ev.query);
        if key.is_empty() {
            continue;
        }
        by_query
            .entry(key)
            .or_insert_with_key(|k| QueryStats { query: k.clone(), ..QueryStats::default() })
            .bump(ev.kind);
    }
    by_query.into_values().collect()
}

fn parse_embedding_line(line: &str) -> Result<EmbeddingFileEntry, LineErrorKind> {
    let f = split_fields(line, 2)?;
    let query = normalized_query(f[0])?;
    let payload = f[1].trim().to_string();
    let embedding = QuantizedEmbedding::decode_payload(&payload)?;
    Ok(EmbeddingFileEntry { query, payload, embedding })
}

/// Parses a `query TAB base64` embedding file.
///
/// A repeated query replaces the earlier entry in place (last one wins) and
/// is counted in [`ParseReport::duplicates`].
pub fn load_embedding_file<R: BufRead>(
    reader: R,
    mode: ParseMode,
    exec: Execution,
) -> Result<ParseReport<EmbeddingFileEntry>, IngestError> {
    let raw = parse_lines(reader, mode, exec, parse_embedding_line)?;
    let mut positions: HashMap<String, usize> = HashMap::with_capacity(raw.records.len());
    let mut report =
        ParseReport { records: Vec::with_capacity(raw.records.len()), errors: raw.errors, duplicates: 0 };
    for entry in raw.records {
        match positions.get(&entry.query) {
            Some(&i) => {
                report.records[i] = entry;
                report.duplicates += 1;
            }
            None => {
                positions.insert(entry.query.clone(), report.records.len());
                report.records.push(entry);
            }
        }
    }
    Ok(report)
}

/// Writes embedding entries back out in file format.
pub fn write_embedding_file<W: std::io::Write>(
    mut out: W,
    entries: &[EmbeddingFileEntry],
) -> std::io::Result<()> {
    for e in entries {
        writeln!(out, "{}\t{}", e.query, e.payload)?;
    }
    Ok(())
}

/// Deterministic stand-in for a sentence encoder.
///
/// Each character trigram of `text` is hashed into one of `dim` buckets with a
/// hashed sign, and the result is L2-normalized. Text with fewer than three
/// characters has no trigrams and maps to the zero vector.
pub fn toy_embed(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim >= 8, "toy embedder needs dim >= 8, got {dim}");
    let chars: Vec<char> = text.chars().collect();
    let mut acc = vec![0.0f64; dim];
    let mut buf = [0u8; 12];
    for window in chars.windows(3) {
        let mut len = 0;
        for c in window {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(&buf[..len]);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}

/// Embeds and quantizes a batch of normalized queries.
pub fn toy_embed_batch(queries: &[String], dim: usize, exec: Execution) -> Vec<EmbeddingFileEntry> {
    exec.map(queries, |q| {
        let embedding = crate::embedding::quantize(&toy_embed(q, dim)).expect("toy embeddings are finite");
        EmbeddingFileEntry { query: q.clone(), payload: embedding.encode_payload(), embedding }
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // finalizer so that both the low bits (bucket) and the top bit (sign) mix
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Parses a query-stats file: `query TAB atc TAB clicks TAB impressions`.
pub fn parse_query_stats<R: BufRead>(
    reader: R,
    mode: ParseMode,
) -> Result<ParseReport<QueryStats>, IngestError> {
    parse_lines(reader, mode, Execution::default(), |line| {
        let f = split_fields(line, 4)?;
        let query = normalized_query(f[0])?;
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| LineErrorKind::Number(s.to_string()));
        Ok(QueryStats { query, atc: num(f[1])?, clicks: num(f[2])?, impressions: num(f[3])? })
    })
}

pub fn write_query_stats<W: std::io::Write>(mut out: W, stats: &[QueryStats]) -> std::io::Result<()> {
    for s in stats {
        writeln!(out, "{}\t{}\t{}\t{}", s.query, s.atc, s.clicks, s.impressions)?;
    }
    Ok(())
}
