//! Prefix matching over precomputed top-K completions.
//!
//! Every query is indexed under each rotation of its token sequence, so
//! `"medicine for kids"` is reachable from `"kids med"` through the key
//! `"kids medicine for"`. Keys live in a byte-level radix tree; every node
//! carries the best `K` distinct queries found anywhere beneath it, so a
//! lookup is one descent along the prefix followed by a slice copy.
//!
//! Queries are totally ordered by score descending, then text ascending. The
//! tree stores each query's position in that order rather than its id, which
//! makes posting merges plain integer merges.

use std::io::{Read, Write};

use thiserror::Error;

use crate::exec::Execution;
use crate::ranked::{QueryId, RankedEntry, RankedList};
use crate::scoring::ScoredQuery;
use crate::text::{normalize, token_rotations};

pub const DEFAULT_TOP_K: usize = 50;
pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate queries after normalization: {0:?}")]
    Duplicates(Vec<String>),
    #[error("query {0:?} is empty after normalization")]
    EmptyQuery(String),
    #[error("query {query:?} has non-finite score {score}")]
    NonFiniteScore { query: String, score: f64 },
    #[error("top-K must be positive")]
    ZeroK,
    #[error("too many queries for a 32-bit index: {0}")]
    TooLarge(usize),
    #[error("unsupported snapshot version {0}")]
    Version(u8),
    #[error("snapshot is corrupt: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub id: QueryId,
    pub text: String,
    pub score: f64,
}

#[derive(Clone, Debug, Default)]
struct Node {
    /// Bytes consumed on the edge into this node.
    label: Box<[u8]>,
    /// Sorted by first byte of the child's label.
    children: Box<[(u8, u32)]>,
    /// Order positions of the best distinct queries in this subtree, ascending.
    postings: Box<[u32]>,
    /// Order positions of queries with a key ending exactly here.
    terminals: Box<[u32]>,
}

/// Immutable completion trie.
#[derive(Clone, Debug)]
pub struct CompletionIndex {
    records: Vec<QueryRecord>,
    /// Order position -> query id.
    order: Vec<QueryId>,
    nodes: Vec<Node>,
    root: u32,
    top_k: usize,
}

/// Result of a traced lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchTrace {
    pub list: RankedList,
    /// Trie nodes touched while descending (excludes any subtree scan).
    pub nodes_visited: usize,
    /// Whether postings were insufficient and the subtree had to be scanned.
    pub subtree_scan: bool,
}

impl CompletionIndex {
    /// Builds from scored queries, using each query's text and score.
    pub fn from_scored(records: &[ScoredQuery], top_k: usize) -> Result<Self, IndexError> {
        Self::build(records.iter().map(|r| (r.query.clone(), r.score)), top_k, Execution::default())
    }

    /// Builds from `(text, score)` pairs. Ids are assigned in input order.
    pub fn build<I>(records: I, top_k: usize, exec: Execution) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (String, f64)>,
    {
        if top_k == 0 {
            return Err(IndexError::ZeroK);
        }
        let mut out: Vec<QueryRecord> = Vec::new();
        for (i, (raw, score)) in records.into_iter().enumerate() {
            let text = normalize(&raw);
            if text.is_empty() {
                return Err(IndexError::EmptyQuery(raw));
            }
            if !score.is_finite() {
                return Err(IndexError::NonFiniteScore { query: text, score });
            }
            let id = u32::try_from(i).map_err(|_| IndexError::TooLarge(i))?;
            out.push(QueryRecord { id: QueryId(id), text, score });
        }
        if out.len() >= u32::MAX as usize {
            return Err(IndexError::TooLarge(out.len()));
        }

        let mut order: Vec<QueryId> = out.iter().map(|r| r.id).collect();
        exec.sort_unstable_by(&mut order, |a, b| {
            let (ra, rb) = (&out[a.0 as usize], &out[b.0 as usize]);
            rb.score.total_cmp(&ra.score).then_with(|| ra.text.cmp(&rb.text))
        });
        let dups: Vec<String> = {
            let mut texts: Vec<&str> = out.iter().map(|r| r.text.as_str()).collect();
            texts.sort_unstable();
            let mut d: Vec<String> =
                texts.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0].to_string()).collect();
            d.dedup();
            d
        };
        if !dups.is_empty() {
            return Err(IndexError::Duplicates(dups));
        }

        let mut position = vec![0u32; out.len()];
        for (pos, id) in order.iter().enumerate() {
            position[id.0 as usize] = pos as u32;
        }
        let mut keys: Vec<(String, u32)> = exec
            .map(&out, |r| {
                token_rotations(&r.text)
                    .into_iter()
                    .map(|k| (k, position[r.id.0 as usize]))
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
        exec.sort_unstable_by(&mut keys, |a, b| a.0.as_bytes().cmp(b.0.as_bytes()).then(a.1.cmp(&b.1)));

        let mut builder = Builder { keys: &keys, nodes: Vec::with_capacity(keys.len() * 2), top_k };
        let root = builder.build(0, keys.len(), 0);
        let nodes = builder.nodes;
        Ok(Self { records: out, order, nodes, root, top_k })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn record(&self, id: QueryId) -> Option<&QueryRecord> {
        self.records.get(id.0 as usize)
    }

    /// Up to `n` queries having a key that starts with `prefix`, best first.
    pub fn match_prefix(&self, prefix: &str, n: usize) -> RankedList {
        self.match_prefix_traced(prefix, n).list
    }

    pub fn match_prefix_traced(&self, prefix: &str, n: usize) -> MatchTrace {
        let p = normalize(prefix);
        let (node, visits) = self.descend(p.as_bytes());
        let Some(node) = node else {
            return MatchTrace { list: RankedList::default(), nodes_visited: visits, subtree_scan: false };
        };
        let node_ref = &self.nodes[node as usize];
        // Postings hold every query below the node unless they hit the cap.
        let complete = node_ref.postings.len() < self.top_k;
        let (positions, scanned): (Vec<u32>, bool) = if n <= node_ref.postings.len() || complete {
            (node_ref.postings.iter().take(n).copied().collect(), false)
        } else {
            (self.scan_subtree(node, n), true)
        };
        MatchTrace {
            list: positions.into_iter().map(|pos| self.entry_at(pos)).collect(),
            nodes_visited: visits,
            subtree_scan: scanned,
        }
    }

    fn entry_at(&self, pos: u32) -> RankedEntry {
        let rec = &self.records[self.order[pos as usize].0 as usize];
        RankedEntry::new(rec.id, rec.text.clone(), rec.score)
    }

    /// Walks the prefix; returns the node whose subtree holds all keys
    /// starting with it, and the number of nodes visited.
    fn descend(&self, prefix: &[u8]) -> (Option<u32>, usize) {
        if self.records.is_empty() {
            return (None, 0);
        }
        let mut node = self.root;
        let mut rest = prefix;
        let mut visits = 1;
        loop {
            let label = &self.nodes[node as usize].label;
            if rest.len() <= label.len() {
                return if label.starts_with(rest) { (Some(node), visits) } else { (None, visits) };
            }
            if !rest.starts_with(label) {
                return (None, visits);
            }
            rest = &rest[label.len()..];
            let children = &self.nodes[node as usize].children;
            match children.binary_search_by_key(&rest[0], |&(b, _)| b) {
                Ok(i) => {
                    node = children[i].1;
                    visits += 1;
                }
                Err(_) => return (None, visits),
            }
        }
    }

    fn scan_subtree(&self, node: u32, n: usize) -> Vec<u32> {
        let mut all = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            let nd = &self.nodes[id as usize];
            all.extend_from_slice(&nd.terminals);
            stack.extend(nd.children.iter().map(|&(_, c)| c));
        }
        all.sort_unstable();
        all.dedup();
        all.truncate(n);
        all
    }

    /// Serializes the query table. The trie is rebuilt on load.
    ///
    /// Layout (little-endian): `version: u8 | top_k: u32 | count: u32`, then
    /// per query in id order `score: f64 | len: u32 | utf8 bytes`.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<(), IndexError> {
        out.write_all(&[SNAPSHOT_VERSION])?;
        out.write_all(&(self.top_k as u32).to_le_bytes())?;
        out.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            out.write_all(&r.score.to_le_bytes())?;
            out.write_all(&(r.text.len() as u32).to_le_bytes())?;
            out.write_all(r.text.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut input: R, exec: Execution) -> Result<Self, IndexError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = Cursor { buf: &bytes, pos: 0 };
        let version = cur.take(1)?[0];
        if version != SNAPSHOT_VERSION {
            return Err(IndexError::Version(version));
        }
        let top_k = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(bytes.len() / 12));
        for _ in 0..count {
            let score = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let len = cur.u32()? as usize;
            let text = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| IndexError::Corrupt("query text is not UTF-8"))?;
            records.push((text.to_string(), score));
        }
        if cur.pos != bytes.len() {
            return Err(IndexError::Corrupt("trailing bytes"));
        }
        Self::build(records, top_k, exec)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(IndexError::Corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct Builder<'a> {
    /// Sorted by key bytes.
    keys: &'a [(String, u32)],
    nodes: Vec<Node>,
    top_k: usize,
}

impl Builder<'_> {
    /// Builds the node for `keys[lo..hi]`, all of which share their first
    /// `depth` bytes. Returns the node index.
    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> u32 {
        let key = |i: usize| self.keys[i].0.as_bytes();
        if lo == hi {
            // only reachable for an empty index
            self.nodes.push(Node::default());
            return (self.nodes.len() - 1) as u32;
        }
        // Extend the edge while every key continues with the same byte.
        // Sorted order puts a key that ends here first, and makes first and
        // last agreeing on a byte sufficient for the whole range.
        let mut end = depth;
        while key(lo).len() > end && key(hi - 1).len() > end && key(lo)[end] == key(hi - 1)[end] {
            end += 1;
        }
        let label: Box<[u8]> = key(lo)[depth..end].into();

        let mut i = lo;
        let mut terminals = Vec::new();
        while i < hi && key(i).len() == end {
            terminals.push(self.keys[i].1);
            i += 1;
        }
        let mut children = Vec::new();
        let mut merged: Vec<u32> = terminals.clone();
        while i < hi {
            let b = key(i)[end];
            let mut j = i + 1;
            while j < hi && key(j)[end] == b {
                j += 1;
            }
            let child = self.build(i, j, end);
            merged.extend_from_slice(&self.nodes[child as usize].postings);
            children.push((b, child));
            i = j;
        }
        merged.sort_unstable();
        merged.dedup();
        merged.truncate(self.top_k);
        terminals.sort_unstable();
        terminals.dedup();

        self.nodes.push(Node {
            label,
            children: children.into_boxed_slice(),
            postings: merged.into_boxed_slice(),
            terminals: terminals.into_boxed_slice(),
        });
        (self.nodes.len() - 1) as u32
    }
}
