//! The request pipeline: match, rank, then a third phase that handles
//! semantic duplicates, then truncate to the visible list.
//!
//! ```text
//! normalize -> match_prefix(pool_size) -> RankHook -> {control | demote | mmr} -> top k
//! ```

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{CompletionIndex, IndexError};
use crate::dedup::{demote, mmr_rerank, ConfigError, DedupConfig};
use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::eval::DEFAULT_VISIBLE_K;
use crate::exec::Execution;
use crate::ingestion::{load_embedding_file, IngestError, ParseMode};
use crate::ranked::RankedList;
use crate::text::normalize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Control,
    #[default]
    Dedup,
    Mmr,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Control => "control",
            Mode::Dedup => "dedup",
            Mode::Mmr => "mmr",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "control" => Ok(Mode::Control),
            "dedup" => Ok(Mode::Dedup),
            "mmr" => Ok(Mode::Mmr),
            other => Err(ServiceError::BadMode(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("service is not initialized")]
    Uninitialized,
    #[error("service is already initialized")]
    AlreadyInitialized,
    #[error("unknown mode {0:?}, expected control, dedup or mmr")]
    BadMode(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("loading index {path}: {source}")]
    Index { path: PathBuf, source: IndexError },
    #[error("loading embeddings {path}: {source}")]
    Embeddings { path: PathBuf, source: IngestError },
    #[error(transparent)]
    Table(#[from] EmbeddingError),
}

impl From<ConfigError> for ServiceError {
    fn from(e: ConfigError) -> Self {
        ServiceError::Config(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestionItem {
    pub rank: usize,
    pub query: String,
    pub score: f64,
    pub demoted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub prefix: String,
    pub mode: Mode,
    pub suggestions: Vec<SuggestionItem>,
}

impl SuggestResponse {
    fn from_list(prefix: &str, mode: Mode, list: &RankedList) -> Self {
        Self {
            prefix: prefix.to_string(),
            mode,
            suggestions: list
                .iter()
                .enumerate()
                .map(|(i, e)| SuggestionItem {
                    rank: i + 1,
                    query: e.text.clone(),
                    score: e.score,
                    demoted: e.demoted,
                })
                .collect(),
        }
    }
}

/// Second-phase ranking between matching and duplicate handling, e.g. for
/// session or seasonal context.
pub trait RankHook: Send + Sync {
    fn rerank(&self, prefix: &str, candidates: RankedList) -> RankedList;
}

/// Keeps the index's score order.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScoreOrder;

impl RankHook for ScoreOrder {
    fn rerank(&self, _prefix: &str, candidates: RankedList) -> RankedList {
        candidates
    }
}

/// Service settings as read from the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub index_path: PathBuf,
    pub embeddings_path: PathBuf,
    pub dedup: DedupConfig,
    pub visible_k: usize,
    pub default_mode: Mode,
    pub listen_addr: String,
    pub strict_parse: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            index_path: PathBuf::from("index.bin"),
            embeddings_path: PathBuf::from("embeddings.tsv"),
            dedup: DedupConfig::default(),
            visible_k: DEFAULT_VISIBLE_K,
            default_mode: Mode::Dedup,
            listen_addr: "127.0.0.1:8080".to_string(),
            strict_parse: false,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        self.dedup.validate()?;
        if self.visible_k == 0 || self.visible_k > self.dedup.pool_size {
            return Err(ServiceError::Config(format!(
                "visible_k must be in 1..={}, got {}",
                self.dedup.pool_size, self.visible_k
            )));
        }
        Ok(())
    }

    pub fn parse_mode(&self) -> ParseMode {
        if self.strict_parse {
            ParseMode::Strict
        } else {
            ParseMode::Lenient
        }
    }
}

/// Loaded, immutable serving state.
pub struct Engine {
    index: CompletionIndex,
    table: EmbeddingTable,
    dedup: DedupConfig,
    visible_k: usize,
    hook: Arc<dyn RankHook>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("queries", &self.index.len())
            .field("embeddings", &self.table.len())
            .field("dedup", &self.dedup)
            .field("visible_k", &self.visible_k)
            .finish()
    }
}

impl Engine {
    pub fn new(
        index: CompletionIndex,
        table: EmbeddingTable,
        dedup: DedupConfig,
        visible_k: usize,
    ) -> Result<Self, ServiceError> {
        dedup.validate()?;
        if visible_k == 0 || visible_k > dedup.pool_size {
            return Err(ServiceError::Config(format!(
                "visible_k must be in 1..={}, got {visible_k}",
                dedup.pool_size
            )));
        }
        Ok(Self { index, table, dedup, visible_k, hook: Arc::new(ScoreOrder) })
    }

    pub fn with_rank_hook(mut self, hook: Arc<dyn RankHook>) -> Self {
        self.hook = hook;
        self
    }

    /// Reads the index snapshot and embedding file named in `config`.
    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let index = load_index(&config.index_path)?;
        let table = load_table(&config.embeddings_path, config.parse_mode())?;
        Self::new(index, table, config.dedup, config.visible_k)
    }

    pub fn index(&self) -> &CompletionIndex {
        &self.index
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn dedup_config(&self) -> &DedupConfig {
        &self.dedup
    }

    pub fn visible_k(&self) -> usize {
        self.visible_k
    }

    /// The full pipeline; `k` is capped at `visible_k`.
    pub fn suggest_list(&self, prefix: &str, k: usize, mode: Mode) -> RankedList {
        let k = k.min(self.visible_k);
        let normalized = normalize(prefix);
        let candidates = self.index.match_prefix(&normalized, self.dedup.pool_size);
        let ranked = self.hook.rerank(&normalized, candidates);
        let mut out = match mode {
            Mode::Control => ranked,
            Mode::Dedup => demote(&ranked, &self.table, &self.dedup),
            Mode::Mmr => mmr_rerank(&ranked, &self.table, self.dedup.mmr_lambda, k),
        };
        out.truncate(k);
        out
    }

    pub fn suggest(&self, prefix: &str, k: usize, mode: Mode) -> SuggestResponse {
        SuggestResponse::from_list(prefix, mode, &self.suggest_list(prefix, k, mode))
    }
}

/// Handle that may be created before its engine is loaded.
#[derive(Debug, Default)]
pub struct SuggestService {
    engine: OnceLock<Engine>,
}

impl SuggestService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_engine(engine: Engine) -> Self {
        let s = Self::new();
        let _ = s.engine.set(engine);
        s
    }

    pub fn initialize(&self, engine: Engine) -> Result<(), ServiceError> {
        self.engine.set(engine).map_err(|_| ServiceError::AlreadyInitialized)
    }

    pub fn engine(&self) -> Result<&Engine, ServiceError> {
        self.engine.get().ok_or(ServiceError::Uninitialized)
    }

    pub fn suggest(&self, prefix: &str, k: usize, mode: &str) -> Result<SuggestResponse, ServiceError> {
        let mode: Mode = mode.parse()?;
        Ok(self.engine()?.suggest(prefix, k, mode))
    }
}

pub fn load_index(path: &Path) -> Result<CompletionIndex, ServiceError> {
    let file = File::open(path).map_err(|source| ServiceError::Io { path: path.to_path_buf(), source })?;
    CompletionIndex::read_snapshot(BufReader::new(file), Execution::default())
        .map_err(|source| ServiceError::Index { path: path.to_path_buf(), source })
}

pub fn load_table(path: &Path, mode: ParseMode) -> Result<EmbeddingTable, ServiceError> {
    let file = File::open(path).map_err(|source| ServiceError::Io { path: path.to_path_buf(), source })?;
    let report = load_embedding_file(BufReader::new(file), mode, Execution::default())
        .map_err(|source| ServiceError::Embeddings { path: path.to_path_buf(), source })?;
    Ok(EmbeddingTable::from_entries(report.records.into_iter().map(|e| (e.query, e.embedding)))?)
}
