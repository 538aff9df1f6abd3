//! Offline evaluation by log replay.
//!
//! A suggest pipeline is any `Fn(&str) -> RankedList`. Replays run through
//! [`Execution`], but per-event results are always reduced in log order, so
//! reports are bit-identical under either strategy.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::is_similar;
use crate::embedding::{cosine_same_dim, EmbeddingTable};
use crate::exec::Execution;
use crate::ingestion::{
    normalized_query, parse_lines, split_fields, IngestError, LineErrorKind, ParseMode, ParseReport,
};
use crate::ranked::RankedList;
use crate::text::normalize;

pub const DEFAULT_VISIBLE_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no engagement events to evaluate")]
    NoEvents,
    #[error("no prefixes to evaluate")]
    NoPrefixes,
    #[error("k must be at least {min}, got {k}")]
    K { k: usize, min: usize },
    #[error("need at least two embedded entries in the top-k, found {0}")]
    TooFewEmbedded(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub prefix: String,
    pub engaged_query: String,
}

impl EngagementEvent {
    pub fn new(prefix: &str, engaged_query: &str) -> Self {
        Self { prefix: prefix.to_string(), engaged_query: normalize(engaged_query) }
    }
}

/// Parses `prefix TAB engaged_query` lines.
pub fn parse_engagement_log<R: BufRead>(
    reader: R,
    mode: ParseMode,
) -> Result<ParseReport<EngagementEvent>, IngestError> {
    parse_lines(reader, mode, Execution::default(), |line| {
        let f = split_fields(line, 2)?;
        if f[0].trim().is_empty() {
            return Err(LineErrorKind::EmptyQuery);
        }
        Ok(EngagementEvent { prefix: f[0].to_string(), engaged_query: normalized_query(f[1])? })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrrOutcome {
    pub mrr: f64,
    /// Events whose engaged query was not among the first k suggestions.
    pub missing: usize,
}

fn reciprocal_rank(list: &RankedList, engaged: &str, k: usize) -> Option<f64> {
    list.entries().iter().take(k).position(|e| e.text == engaged).map(|p| 1.0 / (p + 1) as f64)
}

/// Mean reciprocal rank of the engaged query within the first `k`
/// suggestions. Events whose query is absent contribute 0.
pub fn mrr<F>(
    events: &[EngagementEvent],
    suggest: F,
    k: usize,
    exec: Execution,
) -> Result<MrrOutcome, EvalError>
where
    F: Fn(&str) -> RankedList + Sync + Send,
{
    if events.is_empty() {
        return Err(EvalError::NoEvents);
    }
    if k == 0 {
        return Err(EvalError::K { k, min: 1 });
    }
    let contributions = exec.map(events, |ev| reciprocal_rank(&suggest(&ev.prefix), &ev.engaged_query, k));
    let missing = contributions.iter().filter(|c| c.is_none()).count();
    let sum: f64 = contributions.iter().map(|c| c.unwrap_or(0.0)).sum();
    Ok(MrrOutcome { mrr: sum / events.len() as f64, missing })
}

/// Unordered pairs among the top `k` entries whose cosine reaches `tau`.
pub fn similar_pair_count(list: &RankedList, k: usize, table: &EmbeddingTable, tau: f64) -> usize {
    let embs: Vec<_> = list.entries().iter().take(k).filter_map(|e| table.get(&e.text)).collect();
    let mut count = 0;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            if is_similar(embs[i], embs[j], tau).unwrap_or(false) {
                count += 1;
            }
        }
    }
    count
}

/// Mean of `1 - cosine` over unordered pairs of embedded top-`k` entries.
pub fn mean_pairwise_distance(list: &RankedList, k: usize, table: &EmbeddingTable) -> Result<f64, EvalError> {
    if k < 2 {
        return Err(EvalError::K { k, min: 2 });
    }
    let embs: Vec<_> = list.entries().iter().take(k).filter_map(|e| table.get(&e.text)).collect();
    if embs.len() < 2 {
        return Err(EvalError::TooFewEmbedded(embs.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            total += 1.0 - cosine_same_dim(embs[i], embs[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Fraction of prefixes for which the pipeline suggests nothing.
pub fn null_rate<F, S>(prefixes: &[S], suggest: F, exec: Execution) -> Result<f64, EvalError>
where
    S: AsRef<str> + Sync,
    F: Fn(&str) -> RankedList + Sync + Send,
{
    if prefixes.is_empty() {
        return Err(EvalError::NoPrefixes);
    }
    let empty = exec.map(prefixes, |p| suggest(p.as_ref()).is_empty());
    Ok(empty.iter().filter(|&&e| e).count() as f64 / prefixes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub events_total: usize,
    pub events_missing: usize,
    /// Mean similar-pair count in the top-k, per event.
    pub similar_pairs_topk_mean: f64,
    /// Mean pairwise distance in the top-k, over events with at least two
    /// embedded suggestions (0 when there are none).
    pub mean_pairwise_distance_topk: f64,
    pub null_rate: f64,
}

/// Replays every event once through `suggest` and computes all report fields.
pub fn evaluate<F>(
    events: &[EngagementEvent],
    suggest: F,
    k: usize,
    table: &EmbeddingTable,
    tau: f64,
    exec: Execution,
) -> Result<EvalReport, EvalError>
where
    F: Fn(&str) -> RankedList + Sync + Send,
{
    if events.is_empty() {
        return Err(EvalError::NoEvents);
    }
    if k == 0 {
        return Err(EvalError::K { k, min: 1 });
    }
    struct PerEvent {
        rr: Option<f64>,
        similar_pairs: usize,
        distance: Option<f64>,
        empty: bool,
    }
    let per_event = exec.map(events, |ev| {
        let list = suggest(&ev.prefix);
        PerEvent {
            rr: reciprocal_rank(&list, &ev.engaged_query, k),
            similar_pairs: similar_pair_count(&list, k, table, tau),
            distance: mean_pairwise_distance(&list, k, table).ok(),
            empty: list.is_empty(),
        }
    });
    let n = events.len() as f64;
    let distances: Vec<f64> = per_event.iter().filter_map(|p| p.distance).collect();
    Ok(EvalReport {
        mrr: per_event.iter().map(|p| p.rr.unwrap_or(0.0)).sum::<f64>() / n,
        events_total: events.len(),
        events_missing: per_event.iter().filter(|p| p.rr.is_none()).count(),
        similar_pairs_topk_mean: per_event.iter().map(|p| p.similar_pairs as f64).sum::<f64>() / n,
        mean_pairwise_distance_topk: if distances.is_empty() {
            0.0
        } else {
            distances.iter().sum::<f64>() / distances.len() as f64
        },
        null_rate: per_event.iter().filter(|p| p.empty).count() as f64 / n,
    })
}
