mod support;

use std::sync::Arc;

use memgraph::fixtures;
use memgraph::rag::{
    build_chunks, chunk_fixed, EmbeddingProvider, HashedBagOfWords, RagConfig, RagPipeline, Span, Variant, VectorIndex,
};
use memgraph::MockProvider;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn spans_for(lengths: &[usize]) -> (String, Vec<Span>) {
    let mut doc = String::new();
    let mut spans = Vec::new();
    for (i, len) in lengths.iter().enumerate() {
        if i > 0 {
            doc.push('\n');
        }
        let start = doc.chars().count();
        doc.push_str(&"x".repeat(*len));
        spans.push(Span {
            memory: memgraph::MemoryId::from_sequence(i as u64 + 1),
            start,
            end: start + len,
        });
    }
    (doc, spans)
}

proptest! {
    #[test]
    fn fixed_chunks_cover_the_document(
        lengths in prop::collection::vec(1usize..300, 1..8),
        l in 2usize..300,
        overlap_frac in 0.0f64..1.0,
    ) {
        let overlap = ((l as f64) * overlap_frac) as usize % l;
        let (doc, spans) = spans_for(&lengths);
        let n = doc.chars().count();
        let chunks = chunk_fixed(&doc, &spans, l, overlap).unwrap();
        let mut covered = vec![false; n];
        for (i, c) in chunks.iter().enumerate() {
            let start = i * (l - overlap);
            prop_assert_eq!(c.char_span.0, start);
            prop_assert_eq!(c.char_span.1, (start + l).min(n));
            prop_assert!(!c.source_memory_ids.is_empty());
            for s in &spans {
                let hit = s.start < c.char_span.1 && c.char_span.0 < s.end;
                prop_assert_eq!(hit, c.source_memory_ids.contains(&s.memory) || !spans.iter().any(|t| t.start < c.char_span.1 && c.char_span.0 < t.end));
            }
            covered[c.char_span.0..c.char_span.1].fill(true);
        }
        prop_assert!(covered.iter().all(|c| *c));
        // A chunk holds at most l characters, so a longer summary is split.
        for s in spans.iter().filter(|s| s.end - s.start > l) {
            prop_assert!(chunks.iter().filter(|c| c.source_memory_ids.contains(&s.memory)).count() >= 2);
        }
        if lengths.len() == 1 && lengths[0] > l {
            prop_assert!(chunks.len() > 1);
        }
    }

    #[test]
    fn embedding_is_a_bag(words in prop::collection::vec("[a-z]{1,6}", 0..12), seed in any::<u64>()) {
        let e = HashedBagOfWords::new(512);
        let mut shuffled = words.clone();
        let mut rng = StdRng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let a = e.embed(&words.join(" ")).unwrap();
        let b = e.embed(&shuffled.join(" ")).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.dimension(), 512);
        prop_assert!(a.is_degenerate() || (a.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn top_k_matches_full_sort() {
    let mut rng = StdRng::seed_from_u64(42);
    for round in 0..20 {
        let n = rng.gen_range(0..300);
        let index = support::random_index(&mut rng, n, 64);
        let query: Vec<f64> = if round % 5 == 0 {
            vec![0.0; 64]
        } else {
            (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        for k in [1, 3, 10, 500] {
            support::check_top_k(&index, &query, k).unwrap();
        }
    }
}

#[test]
fn memory_aligned_variants_have_one_chunk_per_memory() {
    for (user, graph) in fixtures::graphs() {
        for variant in [Variant::V2, Variant::V3] {
            let chunks = build_chunks(&graph, &RagConfig::for_variant(variant)).unwrap();
            assert_eq!(chunks.len(), graph.memory_count(), "{user} {variant}");
            assert!(chunks.iter().all(|c| c.source_memory_ids.len() == 1));
        }
    }
}

#[test]
fn mean_chunk_length_grows_v1_small_v2_v3() {
    let mean = |config: RagConfig| {
        let (mut total, mut n) = (0usize, 0usize);
        for graph in fixtures::graphs().values() {
            for c in build_chunks(graph, &config).unwrap() {
                total += c.text.chars().count();
                n += 1;
            }
        }
        total as f64 / n as f64
    };
    let v1 = mean(RagConfig {
        chunk_length: 64,
        overlap: 16,
        ..RagConfig::for_variant(Variant::V1)
    });
    let v2 = mean(RagConfig::for_variant(Variant::V2));
    let v3 = mean(RagConfig::for_variant(Variant::V3));
    assert!(v1 < v2 && v2 < v3, "{v1} {v2} {v3}");
}

#[test]
fn persisted_index_answers_identically() {
    let graphs = fixtures::graphs();
    let graph = &graphs["alex"];
    for variant in Variant::ALL {
        let p = RagPipeline::new(RagConfig::for_variant(variant), Arc::new(MockProvider::new())).unwrap();
        let index = p.build_index(graph).unwrap();
        let loaded = VectorIndex::from_json(&index.to_json()).unwrap();
        assert_eq!(loaded, index);
        let q = memgraph::retrieval::RetrievalQuery::new("Show me my trips");
        assert_eq!(p.answer(graph, &loaded, &q).unwrap(), p.answer(graph, &index, &q).unwrap());
    }
}

#[test]
fn every_rag_outcome_is_grounded_on_fixture_cases() {
    let graphs = fixtures::graphs();
    for variant in Variant::ALL {
        let p = RagPipeline::new(RagConfig::for_variant(variant), Arc::new(MockProvider::new())).unwrap();
        for case in fixtures::eval_cases() {
            let graph = &graphs[&case.user_id];
            let index = p.build_index(graph).unwrap();
            let out = p.answer(graph, &index, &memgraph::retrieval::RetrievalQuery::new(case.query)).unwrap();
            assert!(out.is_grounded());
            assert!(out.retrieved_memories.iter().all(|m| graph.memory(m).is_some()));
            assert!(!out.needs_clarification);
        }
    }
}
