//! Query autocomplete that demotes semantically duplicate suggestions at
//! request time.
//!
//! The pieces, in pipeline order:
//!
//! * [`ingestion`] parses query logs and embedding files, and provides a
//!   deterministic toy embedder.
//! * [`scoring`] turns engagement counts into a behavioral score and fits its
//!   weights.
//! * [`completion`] maps a typed prefix to the best-scoring candidates.
//! * [`embedding`] stores 8-bit quantized query embeddings.
//! * [`dedup`] detects semantic duplicates and demotes, removes, or
//!   diversifies them.
//! * [`eval`] replays engagement logs to measure MRR, diversity and null rate.
//! * [`service`] wires everything into a request pipeline.

pub mod completion;
pub mod dedup;
pub mod embedding;
pub mod eval;
pub mod exec;
pub mod ingestion;
pub mod ranked;
pub mod scoring;
pub mod service;
pub mod text;

pub use completion::{CompletionIndex, QueryRecord};
pub use dedup::{AnchorPolicy, DedupConfig};
pub use embedding::{EmbeddingTable, QuantizedEmbedding};
pub use exec::Execution;
pub use ranked::{QueryId, RankedEntry, RankedList};
pub use service::{Engine, Mode, ServiceConfig, SuggestResponse, SuggestService};
pub use text::normalize;
