//! Semantic deduplication of suggestions.
//!
//! Two queries are semantic duplicates when the cosine similarity of their
//! embeddings reaches the threshold `tau`. The relation is not transitive:
//! A~B and B~C says nothing about A and C.
//!
//! Two ways of acting on it live here:
//!
//! * Offline, [`dedup_index`] keeps only the best-scoring query of each
//!   similarity cluster. Removed variants then have no index entry at all,
//!   so prefixes of those variants match nothing.
//! * At request time, [`demote`] keeps every candidate but moves lower-ranked
//!   duplicates to a block at a low rank, letting the next distinct
//!   candidates move up.
//!
//! [`mmr_rerank`] is the graded alternative: maximal marginal relevance over
//! the candidate pool.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, cosine_same_dim, EmbeddingError, EmbeddingTable, QuantizedEmbedding};
use crate::ranked::{RankedEntry, RankedList};
use crate::scoring::ScoredQuery;

/// Which already-retained entries a candidate is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorPolicy {
    /// Every retained entry. Quadratic.
    All,
    /// Only the rank-1 entry. Linear: exactly `len - 1` comparisons.
    #[default]
    First,
    /// The `w` most recently retained entries.
    Window(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub similarity_threshold: f64,
    /// 1-based rank where the demoted block starts.
    pub demote_rank: usize,
    pub pool_size: usize,
    pub anchor_policy: AnchorPolicy,
    pub mmr_lambda: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.92,
            demote_rank: 20,
            pool_size: 50,
            anchor_policy: AnchorPolicy::First,
            mmr_lambda: 0.5,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("similarity threshold must be in (0, 1], got {0}")]
    Threshold(f64),
    #[error("demote rank must be at least 2, got {0}")]
    DemoteRank(usize),
    #[error("pool size must be positive")]
    PoolSize,
    #[error("window anchor policy needs w >= 1")]
    Window,
    #[error("mmr lambda must be in [0, 1], got {0}")]
    Lambda(f64),
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(ConfigError::Threshold(self.similarity_threshold));
        }
        // rank 1 is never displaced
        if self.demote_rank < 2 {
            return Err(ConfigError::DemoteRank(self.demote_rank));
        }
        if self.pool_size == 0 {
            return Err(ConfigError::PoolSize);
        }
        if self.anchor_policy == AnchorPolicy::Window(0) {
            return Err(ConfigError::Window);
        }
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(ConfigError::Lambda(self.mmr_lambda));
        }
        Ok(())
    }
}

/// `cosine(a, b) >= tau`.
pub fn is_similar(a: &QuantizedEmbedding, b: &QuantizedEmbedding, tau: f64) -> Result<bool, EmbeddingError> {
    Ok(cosine(a, b)? >= tau)
}

/// One group of the greedy partition. Indices refer to the input slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimilarCluster {
    pub leader: usize,
    /// Leader first, then absorbed members in processing order.
    pub members: Vec<usize>,
}

/// Score-descending order with lexicographic tie-break.
fn score_order(records: &[ScoredQuery]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b].score.total_cmp(&records[a].score).then_with(|| records[a].query.cmp(&records[b].query))
    });
    order
}

/// Greedy leader clustering.
///
/// Records are visited best-first; each joins the first existing cluster
/// whose leader it is similar to, otherwise it leads a new cluster. Records
/// without an embedding always form singletons.
pub fn cluster_greedy(records: &[ScoredQuery], table: &EmbeddingTable, tau: f64) -> Vec<SimilarCluster> {
    let mut clusters: Vec<SimilarCluster> = Vec::new();
    // (cluster index, leader embedding) for leaders that have one
    let mut leaders: Vec<(usize, &QuantizedEmbedding)> = Vec::new();
    for idx in score_order(records) {
        let emb = table.get(&records[idx].query);
        let home =
            emb.and_then(|e| leaders.iter().find(|(_, le)| cosine_same_dim(le, e) >= tau).map(|&(c, _)| c));
        match home {
            Some(c) => clusters[c].members.push(idx),
            None => {
                if let Some(e) = emb {
                    leaders.push((clusters.len(), e));
                }
                clusters.push(SimilarCluster { leader: idx, members: vec![idx] });
            }
        }
    }
    clusters
}

/// Keeps only the leader of each greedy cluster, in input order.
pub fn dedup_index(records: &[ScoredQuery], table: &EmbeddingTable, tau: f64) -> Vec<ScoredQuery> {
    let mut keep: Vec<usize> = cluster_greedy(records, table, tau).into_iter().map(|c| c.leader).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| records[i].clone()).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DemoteStats {
    /// Similarity computations performed.
    pub comparisons: usize,
    pub demoted: usize,
}

/// Demotes semantic duplicates of higher-ranked entries; see [`demote_traced`].
pub fn demote(list: &RankedList, table: &EmbeddingTable, cfg: &DedupConfig) -> RankedList {
    demote_traced(list, table, cfg).0
}

/// Scans the list from rank 2, comparing each entry with anchors chosen from
/// the entries retained so far. An entry similar to any anchor is demoted.
///
/// The output holds the first `demote_rank - 1` retained entries, then the
/// demoted block in original order (flagged), then the remaining retained
/// entries. It is always a permutation of the input, rank 1 never moves, and
/// entries without an embedding are never demoted.
pub fn demote_traced(
    list: &RankedList,
    table: &EmbeddingTable,
    cfg: &DedupConfig,
) -> (RankedList, DemoteStats) {
    let entries = list.entries();
    let mut stats = DemoteStats::default();
    if entries.is_empty() {
        return (RankedList::default(), stats);
    }
    let embs: Vec<Option<&QuantizedEmbedding>> = entries.iter().map(|e| table.get(&e.text)).collect();
    let tau = cfg.similarity_threshold;

    let mut retained: Vec<usize> = vec![0];
    let mut demoted: Vec<usize> = Vec::new();
    for (i, emb) in embs.iter().enumerate().skip(1) {
        let Some(emb) = emb else {
            retained.push(i);
            continue;
        };
        let anchors: &[usize] = match cfg.anchor_policy {
            AnchorPolicy::All => &retained,
            AnchorPolicy::First => &retained[..1],
            AnchorPolicy::Window(w) => &retained[retained.len().saturating_sub(w)..],
        };
        let mut similar = false;
        for &a in anchors {
            if let Some(anchor) = embs[a] {
                stats.comparisons += 1;
                if cosine_same_dim(anchor, emb) >= tau {
                    similar = true;
                    break;
                }
            }
        }
        if similar {
            demoted.push(i);
        } else {
            retained.push(i);
        }
    }
    stats.demoted = demoted.len();

    let head = retained.len().min(cfg.demote_rank.max(2) - 1);
    let order = retained[..head]
        .iter()
        .map(|&i| (i, false))
        .chain(demoted.iter().map(|&i| (i, true)))
        .chain(retained[head..].iter().map(|&i| (i, false)));
    let out = order.map(|(i, flag)| RankedEntry { demoted: flag, ..entries[i].clone() }).collect();
    (out, stats)
}

/// Maximal marginal relevance over the whole list.
///
/// Relevance is the min-max normalized score (all equal -> 1). Starting from
/// the most relevant entry, each step picks the entry maximizing
/// `lambda * rel - (1 - lambda) * max cos(selected)`; ties go to the earlier
/// rank. The `k` picks come first in selection order, followed by the rest
/// in original order. Missing embeddings count as similarity 0.
pub fn mmr_rerank(list: &RankedList, table: &EmbeddingTable, lambda: f64, k: usize) -> RankedList {
    let entries = list.entries();
    let n = entries.len();
    let k = k.min(n);
    if n == 0 {
        return RankedList::default();
    }
    let embs: Vec<Option<&QuantizedEmbedding>> = entries.iter().map(|e| table.get(&e.text)).collect();
    let (lo, hi) = entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.score), hi.max(e.score)));
    let rel: Vec<f64> =
        entries.iter().map(|e| if hi > lo { (e.score - lo) / (hi - lo) } else { 1.0 }).collect();

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    // max similarity of each candidate to anything selected so far
    let mut max_sim = vec![f64::NEG_INFINITY; n];
    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let objective =
                if selected.is_empty() { rel[i] } else { lambda * rel[i] - (1.0 - lambda) * max_sim[i] };
            if best.is_none_or(|(_, b)| objective > b) {
                best = Some((i, objective));
            }
        }
        let (pick, _) = best.expect("k <= n leaves a candidate");
        taken[pick] = true;
        selected.push(pick);
        for i in (0..n).filter(|&i| !taken[i]) {
            let sim = match (embs[pick], embs[i]) {
                (Some(a), Some(b)) => cosine_same_dim(a, b),
                _ => 0.0,
            };
            max_sim[i] = max_sim[i].max(sim);
        }
    }
    selected.iter().copied().chain((0..n).filter(|&i| !taken[i])).map(|i| entries[i].clone()).collect()
}
