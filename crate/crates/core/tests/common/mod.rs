#![allow(dead_code)]

use std::collections::HashSet;

use deboost_core::embedding::quantize;
use deboost_core::ingestion::toy_embed_batch;
use deboost_core::{
    CompletionIndex, DedupConfig, EmbeddingTable, Engine, Execution, QueryId, RankedEntry, RankedList,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v = gaussian(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn float_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// A ranked list of `len` entries whose embeddings are drawn around a few
/// centroids, so that duplicates at tau ~ 0.9 are common.
pub fn clustered_instance(rng: &mut impl Rng, len: usize, dim: usize) -> (RankedList, EmbeddingTable) {
    let centroids: Vec<Vec<f64>> = (0..rng.random_range(1..=4)).map(|_| unit(rng, dim)).collect();
    let mut entries = Vec::with_capacity(len);
    let mut embs = Vec::with_capacity(len);
    for i in 0..len {
        let text = format!("q{i}");
        let v: Vec<f64> = if rng.random_bool(0.8) {
            let c = &centroids[rng.random_range(0..centroids.len())];
            let noise = rng.random_range(0.05..0.6);
            let g = gaussian(rng, dim);
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter().zip(&g).map(|(a, b)| a + noise * b / gn).collect()
        } else {
            unit(rng, dim)
        };
        embs.push((text.clone(), quantize(&v).unwrap()));
        entries.push(RankedEntry::new(QueryId(i as u32), text, (len - i) as f64));
    }
    (RankedList::new(entries), EmbeddingTable::from_entries(embs).unwrap())
}

const SYLLABLES: &[&str] =
    &["ka", "lo", "mi", "ne", "pu", "ra", "so", "ti", "va", "ze", "bo", "du", "fe", "gi", "ho", "ju"];

fn word(rng: &mut impl Rng) -> String {
    (0..rng.random_range(2..=4)).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

/// `n` distinct queries of 1-4 tokens with heavy-tailed scores.
pub fn synthetic_queries(n: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = rng(seed);
    let vocab: Vec<String> = (0..4000).map(|_| word(&mut rng)).collect();
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let tokens = rng.random_range(1..=4);
        let q: Vec<&str> = (0..tokens).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect();
        let q = q.join(" ");
        if seen.insert(q.clone()) {
            let score = 1000.0 / (1.0 + rng.random_range(0.0f64..1.0) * out.len() as f64).sqrt();
            out.push((q, score));
        }
    }
    out
}

pub fn engine_for(queries: &[(String, f64)], dim: usize, dedup: DedupConfig, visible_k: usize) -> Engine {
    let index =
        CompletionIndex::build(queries.iter().cloned(), dedup.pool_size, Execution::Parallel).unwrap();
    let texts: Vec<String> = queries.iter().map(|(q, _)| q.clone()).collect();
    let table = EmbeddingTable::from_entries(
        toy_embed_batch(&texts, dim, Execution::Parallel).into_iter().map(|e| (e.query, e.embedding)),
    )
    .unwrap();
    Engine::new(index, table, dedup, visible_k).unwrap()
}

pub fn table_of(items: &[(&str, Vec<f64>)]) -> EmbeddingTable {
    EmbeddingTable::from_entries(items.iter().map(|(q, v)| (q.to_string(), quantize(v).unwrap()))).unwrap()
}
