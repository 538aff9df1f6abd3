use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a query inside one [`CompletionIndex`](crate::completion::CompletionIndex).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryId(pub u32);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: QueryId,
    pub text: String,
    pub score: f64,
    pub demoted: bool,
}

impl RankedEntry {
    pub fn new(id: QueryId, text: impl Into<String>, score: f64) -> Self {
        Self { id, text: text.into(), score, demoted: false }
    }
}

/// An ordered suggestion list. Rank of an entry is its position plus one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Panics in debug builds if two entries share a query id.
    pub fn new(entries: Vec<RankedEntry>) -> Self {
        debug_assert!(
            {
                let mut ids: Vec<QueryId> = entries.iter().map(|e| e.id).collect();
                ids.sort_unstable();
                ids.windows(2).all(|w| w[0] != w[1])
            },
            "ranked list entries must be unique by id"
        );
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RankedEntry> {
        self.entries.iter()
    }

    pub fn into_entries(self) -> Vec<RankedEntry> {
        self.entries
    }

    /// 1-based rank of the entry whose text equals `text`.
    pub fn rank_of(&self, text: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.text == text).map(|p| p + 1)
    }

    pub fn texts(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.text.as_str()).collect()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

impl<'a> IntoIterator for &'a RankedList {
    type Item = &'a RankedEntry;
    type IntoIter = std::slice::Iter<'a, RankedEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

impl FromIterator<RankedEntry> for RankedList {
    fn from_iter<I: IntoIterator<Item = RankedEntry>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}
