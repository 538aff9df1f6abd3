//! Command-line front end for the deboost engine.
//!
//! Each subcommand is a thin adapter from files to `deboost_core` calls. The
//! `serve` subcommand lives in [`server`].

pub mod server;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use deboost_core::dedup::dedup_index;
use deboost_core::eval::{evaluate, parse_engagement_log};
use deboost_core::ingestion::{
    aggregate_events, parse_event_log, parse_query_stats, toy_embed_batch, write_embedding_file,
    write_query_stats, ParseMode, ParseReport,
};
use deboost_core::scoring::{fit_weights, score_all, FitOptions, Weights};
use deboost_core::service::{load_index, load_table};
use deboost_core::{normalize, CompletionIndex, Engine, Execution, Mode, ServiceConfig};

/// Environment variable that overrides `listen_addr` from the config file.
pub const LISTEN_ENV: &str = "DEBOOST_LISTEN_ADDR";

#[derive(Debug, Parser)]
#[command(name = "deboost", version, about = "Query autocomplete with semantic de-boosting")]
pub struct Cli {
    /// Abort on the first malformed input line instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate an event log into a query-stats file.
    Aggregate {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        from: u32,
        #[arg(long)]
        to: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit behavioral-score weights from an event log and print `a b c`.
    FitWeights {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, default_value_t = 350)]
        history_days: u32,
        #[arg(long, default_value_t = 14)]
        target_days: u32,
        #[arg(long)]
        clamp_nonnegative: bool,
    },
    /// Score a query-stats file and write an index snapshot.
    BuildIndex {
        #[arg(long)]
        queries: PathBuf,
        /// Weights as `atc,clicks,impressions`.
        #[arg(long, allow_hyphen_values = true)]
        weights: Weights,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = deboost_core::completion::DEFAULT_TOP_K)]
        top_k: usize,
    },
    /// Keep only the best-scoring query of each similar cluster.
    DedupIndex {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 0.92)]
        tau: f64,
        /// Weights as `atc,clicks,impressions`, used to pick cluster leaders.
        #[arg(long, allow_hyphen_values = true)]
        weights: Weights,
        /// Query-stats file holding the surviving queries.
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every query of a file with the toy embedder.
    Embed {
        /// One query per line; only the first tab-separated field is used.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 768)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one prefix and print the response as JSON.
    Suggest {
        #[arg(long)]
        prefix: String,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Replay an engagement log and print the report as one JSON line.
    Eval {
        #[arg(long)]
        engagements: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value = "dedup")]
        mode: Mode,
        #[arg(long, default_value_t = deboost_core::eval::DEFAULT_VISIBLE_K)]
        k: usize,
    },
    /// Run the HTTP server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Service config; its paths are overridden by --index and --embeddings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl EngineArgs {
    fn resolve(&self) -> anyhow::Result<ServiceConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => ServiceConfig::default(),
        };
        match (&self.index, &self.config) {
            (Some(p), _) => cfg.index_path = p.clone(),
            (None, None) => bail!("--index or --config is required"),
            _ => {}
        }
        match (&self.embeddings, &self.config) {
            (Some(p), _) => cfg.embeddings_path = p.clone(),
            (None, None) => bail!("--embeddings or --config is required"),
            _ => {}
        }
        Ok(cfg)
    }
}

/// Reads a JSON service config without applying overrides.
pub fn read_config(path: &Path) -> anyhow::Result<ServiceConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Reads a config, applies the listen-address override, and validates it.
pub fn load_config(path: &Path, listen_override: Option<String>) -> anyhow::Result<ServiceConfig> {
    let mut cfg = read_config(path)?;
    if let Some(addr) = listen_override.filter(|a| !a.trim().is_empty()) {
        cfg.listen_addr = addr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn parse_mode(strict: bool) -> ParseMode {
    if strict {
        ParseMode::Strict
    } else {
        ParseMode::Lenient
    }
}

fn report<T>(path: &Path, r: ParseReport<T>) -> Vec<T> {
    if !r.errors.is_empty() {
        tracing::warn!(file = %path.display(), skipped = r.errors.len(), first = %r.errors[0], "malformed lines skipped");
    }
    if r.duplicates > 0 {
        tracing::warn!(file = %path.display(), duplicates = r.duplicates, "duplicate keys, last one kept");
    }
    r.records
}

fn read_queries(path: &Path) -> anyhow::Result<Vec<String>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        let q = normalize(line.split('\t').next().unwrap_or(""));
        if !q.is_empty() && seen.insert(q.clone()) {
            out.push(q);
        }
    }
    Ok(out)
}

fn load_engine(cfg: &ServiceConfig, strict: bool, visible_k: usize) -> anyhow::Result<Engine> {
    let index = load_index(&cfg.index_path)?;
    let table = load_table(&cfg.embeddings_path, parse_mode(strict || cfg.strict_parse))?;
    Ok(Engine::new(index, table, cfg.dedup, visible_k)?)
}

/// Runs one subcommand, writing its primary output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let mode = parse_mode(cli.strict);
    match cli.command {
        Command::Aggregate { events, from, to, out: path } => {
            if from > to {
                bail!("--from {from} is after --to {to}");
            }
            let evs = report(&events, parse_event_log(open(&events)?, mode)?);
            let stats = aggregate_events(&evs, from..=to);
            let mut w = create(&path)?;
            write_query_stats(&mut w, &stats)?;
            w.flush()?;
            tracing::info!(queries = stats.len(), "aggregated");
        }
        Command::FitWeights { events, history_days, target_days, clamp_nonnegative } => {
            let evs = report(&events, parse_event_log(open(&events)?, mode)?);
            let opts = FitOptions { history_days, target_days, clamp_nonnegative };
            writeln!(out, "{}", fit_weights(&evs, &opts)?)?;
        }
        Command::BuildIndex { queries, weights, out: path, top_k } => {
            let stats = report(&queries, parse_query_stats(open(&queries)?, mode)?);
            let index = CompletionIndex::from_scored(&score_all(stats, &weights), top_k)?;
            let mut w = create(&path)?;
            index.write_snapshot(&mut w)?;
            w.flush()?;
            tracing::info!(queries = index.len(), nodes = index.node_count(), "index written");
        }
        Command::DedupIndex { queries, embeddings, tau, weights, out: path } => {
            let stats = report(&queries, parse_query_stats(open(&queries)?, mode)?);
            let table = load_table(&embeddings, mode)?;
            let scored = score_all(stats, &weights);
            let kept = dedup_index(&scored, &table, tau);
            let kept_stats: Vec<_> = kept.into_iter().map(|s| s.stats).collect();
            let mut w = create(&path)?;
            write_query_stats(&mut w, &kept_stats)?;
            w.flush()?;
            tracing::info!(before = scored.len(), after = kept_stats.len(), "deduplicated");
        }
        Command::Embed { queries, dim, out: path } => {
            if dim < 8 {
                bail!("--dim must be at least 8");
            }
            let qs = read_queries(&queries)?;
            let entries = toy_embed_batch(&qs, dim, Execution::default());
            let mut w = create(&path)?;
            write_embedding_file(&mut w, &entries)?;
            w.flush()?;
            tracing::info!(queries = entries.len(), dim, "embeddings written");
        }
        Command::Suggest { prefix, engine, k, mode } => {
            let cfg = engine.resolve()?;
            let engine = load_engine(&cfg, cli.strict, cfg.visible_k)?;
            let resp = engine.suggest(&prefix, k.unwrap_or(cfg.visible_k), mode.unwrap_or(cfg.default_mode));
            writeln!(out, "{}", serde_json::to_string(&resp)?)?;
        }
        Command::Eval { engagements, engine, mode: suggest_mode, k } => {
            let cfg = engine.resolve()?;
            let engine = load_engine(&cfg, cli.strict, k)?;
            let events = report(&engagements, parse_engagement_log(open(&engagements)?, mode)?);
            let rep = evaluate(
                &events,
                |p| engine.suggest_list(p, k, suggest_mode),
                k,
                engine.table(),
                cfg.dedup.similarity_threshold,
                Execution::default(),
            )?;
            writeln!(out, "{}", serde_json::to_string(&rep)?)?;
        }
        Command::Serve { config } => {
            let cfg = load_config(&config, std::env::var(LISTEN_ENV).ok())?;
            let engine = load_engine(&cfg, cli.strict, cfg.visible_k)?;
            let state = server::AppState { engine: Arc::new(engine), default_mode: cfg.default_mode };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = server::bind(&cfg.listen_addr).await?;
                server::serve(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
        }
    }
    Ok(())
}
