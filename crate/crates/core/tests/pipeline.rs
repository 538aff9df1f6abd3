mod common;

use std::fs::File;
use std::io::BufWriter;

use deboost_core::dedup::{dedup_index, demote, mmr_rerank, AnchorPolicy, DedupConfig};
use deboost_core::eval::{mean_pairwise_distance, mrr, null_rate, similar_pair_count, EngagementEvent};
use deboost_core::ingestion::QueryStats;
use deboost_core::ingestion::{toy_embed_batch, write_embedding_file};
use deboost_core::scoring::ScoredQuery;
use deboost_core::{
    CompletionIndex, EmbeddingTable, Engine, Execution, Mode, QueryId, RankedEntry, RankedList,
    ServiceConfig, SuggestService,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn cfg(policy: AnchorPolicy, tau: f64, demote_rank: usize) -> DedupConfig {
    DedupConfig { similarity_threshold: tau, demote_rank, anchor_policy: policy, ..DedupConfig::default() }
}

#[test]
fn engine_loads_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let queries: Vec<(String, f64)> =
        vec![("kids medicine".into(), 3.0), ("medicine for kids".into(), 2.0), ("kids toys".into(), 5.0)];
    let index = CompletionIndex::build(queries.clone(), 50, Execution::Sequential).unwrap();
    let index_path = dir.path().join("index.bin");
    index.write_snapshot(BufWriter::new(File::create(&index_path).unwrap())).unwrap();

    let texts: Vec<String> = queries.iter().map(|(q, _)| q.clone()).collect();
    let entries = toy_embed_batch(&texts, 32, Execution::Sequential);
    let emb_path = dir.path().join("emb.tsv");
    write_embedding_file(File::create(&emb_path).unwrap(), &entries).unwrap();

    let config = ServiceConfig {
        index_path: index_path.clone(),
        embeddings_path: emb_path,
        ..ServiceConfig::default()
    };
    let engine = Engine::load(&config).unwrap();
    assert_eq!(engine.index().len(), 3);
    assert_eq!(engine.table().len(), 3);
    let got = engine.suggest_list("kids", 10, Mode::Control);
    assert_eq!(got.texts(), ["kids toys", "kids medicine", "medicine for kids"]);

    let missing = ServiceConfig { index_path: dir.path().join("nope.bin"), ..config };
    assert!(Engine::load(&missing).is_err());
}

#[test]
fn uninitialized_service_refuses_requests() {
    let service = SuggestService::new();
    assert!(service.suggest("kids", 10, "dedup").is_err());
}

#[test]
fn deduped_index_has_higher_null_rate_than_runtime_demotion() {
    let table = table_of(&[
        ("men's bicycle", vec![1.0, 0.03, 0.0]),
        ("bicycle for men", vec![1.0, 0.0, 0.03]),
        ("mountain bike", vec![0.0, 1.0, 0.0]),
    ]);
    let records: Vec<ScoredQuery> =
        [("men's bicycle", 5.0), ("bicycle for men", 3.0), ("mountain bike", 4.0)]
            .iter()
            .map(|(q, s)| ScoredQuery { query: q.to_string(), stats: QueryStats::default(), score: *s })
            .collect();
    let kept = dedup_index(&records, &table, 0.92);
    let deduped = CompletionIndex::from_scored(&kept, 50).unwrap();
    let engine =
        Engine::new(CompletionIndex::from_scored(&records, 50).unwrap(), table, DedupConfig::default(), 10)
            .unwrap();
    let prefixes = ["bicycle f", "men", "mountain", "for men"];
    let offline = null_rate(&prefixes, |p| deduped.match_prefix(p, 10), Execution::Sequential).unwrap();
    let runtime =
        null_rate(&prefixes, |p| engine.suggest_list(p, 10, Mode::Dedup), Execution::Sequential).unwrap();
    assert_eq!(runtime, 0.0);
    assert!(offline > runtime, "offline {offline} runtime {runtime}");
}

#[test]
fn demotion_moves_entries_only_in_the_expected_direction() {
    let mut rng = rng(11);
    for _ in 0..300 {
        let len = rng.random_range(1..=15);
        let (list, table) = clustered_instance(&mut rng, len, 16);
        let d = rng.random_range(2..=12);
        let out = demote(&list, &table, &cfg(AnchorPolicy::All, 0.9, d));
        for e in list.iter() {
            let before = list.rank_of(&e.text).unwrap();
            let after = out.rank_of(&e.text).unwrap();
            if out.entries()[after - 1].demoted {
                // the block sits at rank d, so a deep duplicate can rise to it
                assert!(after >= before.min(d));
            } else if after < d {
                assert!(after <= before);
            }
        }
        // reciprocal rank of an engaged entry follows the same direction
        let target = &list.entries()[rng.random_range(0..len)].text;
        let events = [EngagementEvent::new("p", target)];
        let a = mrr(&events, |_| list.clone(), 10, Execution::Sequential).unwrap().mrr;
        let b = mrr(&events, |_| out.clone(), 10, Execution::Sequential).unwrap().mrr;
        let (before, after) = (list.rank_of(target).unwrap(), out.rank_of(target).unwrap());
        if out.entries()[after - 1].demoted && before <= d {
            assert!(b <= a);
        } else if after < d {
            assert!(b >= a);
        }
    }
}

#[test]
fn all_policy_with_late_demote_rank_clears_top_k() {
    let mut rng = rng(12);
    for _ in 0..300 {
        let len = rng.random_range(1..=30);
        let (list, table) = clustered_instance(&mut rng, len, 16);
        let k = 10;
        let out = demote(&list, &table, &cfg(AnchorPolicy::All, 0.9, k + 1 + rng.random_range(0..5)));
        let retained: RankedList = out.iter().filter(|e| !e.demoted).cloned().collect();
        assert_eq!(similar_pair_count(&retained, k, &table, 0.9), 0);
        if retained.len() >= k {
            assert_eq!(similar_pair_count(&out, k, &table, 0.9), 0);
        }
    }
}

#[test]
fn mmr_spreads_dominated_duplicates() {
    let mut rng = rng(13);
    let mut improved = 0;
    for _ in 0..200 {
        let base = unit(&mut rng, 16);
        let other = unit(&mut rng, 16);
        let mut items: Vec<(String, Vec<f64>)> = Vec::new();
        for i in 0..4 {
            let n = unit(&mut rng, 16);
            items.push((format!("dup{i}"), base.iter().zip(&n).map(|(a, b)| a + 0.05 * b).collect()));
        }
        items.push(("other".into(), other));
        let table = EmbeddingTable::from_entries(
            items.iter().map(|(q, v)| (q.clone(), deboost_core::embedding::quantize(v).unwrap())),
        )
        .unwrap();
        let list: RankedList = items
            .iter()
            .enumerate()
            .map(|(i, (q, _))| RankedEntry::new(QueryId(i as u32), q.clone(), 10.0 - i as f64))
            .collect();
        let before = mean_pairwise_distance(&list, 2, &table).unwrap();
        let after = mean_pairwise_distance(&mmr_rerank(&list, &table, 0.5, 2), 2, &table).unwrap();
        assert!(after >= before - 1e-12);
        improved += usize::from(after > before);
    }
    assert!(improved > 150);
}

#[test]
fn execution_strategies_agree_on_pipeline() {
    let queries = synthetic_queries(3000, 14);
    let engine = engine_for(&queries, 32, DedupConfig::default(), 10);
    let texts: Vec<String> = queries.iter().map(|(q, _)| q.clone()).collect();
    let seq = toy_embed_batch(&texts, 32, Execution::Sequential);
    let par = toy_embed_batch(&texts, 32, Execution::Parallel);
    assert_eq!(seq, par);
    let a = CompletionIndex::build(queries.clone(), 50, Execution::Sequential).unwrap();
    let b = CompletionIndex::build(queries.clone(), 50, Execution::Parallel).unwrap();
    let events: Vec<EngagementEvent> =
        queries.iter().take(500).map(|(q, _)| EngagementEvent::new(&q[..q.len().min(3)], q)).collect();
    for e in &events {
        assert_eq!(a.match_prefix(&e.prefix, 50), b.match_prefix(&e.prefix, 50));
    }
    let run = |exec| mrr(&events, |p| engine.suggest_list(p, 10, Mode::Dedup), 10, exec).unwrap();
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

fn window_case() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..25, 2usize..30)
}

proptest! {
    #[test]
    fn unbounded_window_equals_all((seed, len, d) in window_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (list, table) = clustered_instance(&mut rng, len, 8);
        let all = demote(&list, &table, &cfg(AnchorPolicy::All, 0.9, d));
        let window = demote(&list, &table, &cfg(AnchorPolicy::Window(usize::MAX), 0.9, d));
        prop_assert_eq!(all, window);
        let wide = demote(&list, &table, &cfg(AnchorPolicy::Window(len), 0.9, d));
        prop_assert_eq!(demote(&list, &table, &cfg(AnchorPolicy::All, 0.9, d)), wide);
    }

    #[test]
    fn window_of_one_only_looks_at_the_previous_retained((seed, len, d) in window_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (list, table) = clustered_instance(&mut rng, len, 8);
        let out = demote(&list, &table, &cfg(AnchorPolicy::Window(1), 0.9, d));
        let mut last: Option<&RankedEntry> = None;
        let mut kept = Vec::new();
        for e in list.iter() {
            let similar = last.is_some_and(|l| {
                deboost_core::embedding::cosine(table.get(&l.text).unwrap(), table.get(&e.text).unwrap()).unwrap()
                    >= 0.9
            });
            if !similar {
                kept.push(e.id);
                last = Some(e);
            }
        }
        let got: Vec<QueryId> = out.iter().filter(|e| !e.demoted).map(|e| e.id).collect();
        prop_assert_eq!(got, kept);
    }
}
