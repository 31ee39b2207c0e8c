//! Random graph builders and brute-force oracles shared by the test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use memgraph::graph::{
    ConversationTurn, InterestCategory, InterestId, MemoryId, MemoryNode, RelationalMemoryGraph,
    SemanticKind, SemanticSource,
};
use memgraph::rag::{ChunkId, EmbeddingVector, VectorIndex};
use rand::seq::SliceRandom;
use rand::Rng;

pub const LABELS: &[&str] = &[
    "hiking", "Travel", "  beach ", "lake", "Yosemite!", "birthday", "concert", "paris",
    "cooking", "new   york", "skiing", "zoo", "christmas", "road trip", "chess", "museum",
    "kayaking", "festival", "surfing", "pottery", "camping", "tokyo", "rome", "lisbon",
    "seattle", "yoga", "fishing", "wedding", "picnic", "marathon", "HIKING",
];

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

pub fn add_memory(graph: &mut RelationalMemoryGraph, offset_minutes: i64) -> MemoryId {
    let id = graph.next_memory_id();
    let at = epoch() + Duration::minutes(offset_minutes);
    graph
        .add_memory(MemoryNode {
            id: id.clone(),
            created_at: at,
            media_refs: Vec::new(),
            conversation: vec![ConversationTurn::user(format!("moment {id}"), at)],
            user_id: graph.user_id().to_owned(),
        })
        .unwrap();
    id
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Add,
    Attach,
    Link,
    Delete,
}

/// Applies `steps` random operations, asserting each one's local contract.
pub fn random_build<R: Rng>(rng: &mut R, steps: usize, max_labels: usize) -> RelationalMemoryGraph {
    let mut g = RelationalMemoryGraph::new("prop-user");
    let labels = &LABELS[..max_labels.min(LABELS.len())];
    for step in 0..steps {
        let live: Vec<MemoryId> = g.memories().map(|m| m.id.clone()).collect();
        let op = if live.is_empty() {
            Op::Add
        } else {
            *[Op::Add, Op::Add, Op::Attach, Op::Link, Op::Link, Op::Delete].choose(rng).unwrap()
        };
        match op {
            Op::Add => {
                add_memory(&mut g, step as i64);
            }
            Op::Attach => {
                let m = live.choose(rng).unwrap().clone();
                let before = g.semantic_count();
                let mut nodes = Vec::new();
                for _ in 0..rng.gen_range(1..4) {
                    let kind = *SemanticKind::ALL
                        .iter()
                        .filter(|k| **k != SemanticKind::Summary)
                        .collect::<Vec<_>>()
                        .choose(rng)
                        .unwrap();
                    nodes.push(g.new_semantic(&m, *kind, format!("v{}", rng.gen_range(0..50)), SemanticSource::Conversation));
                }
                if g.summary_of(&m).is_none() && rng.gen_bool(0.5) {
                    nodes.push(g.new_semantic(&m, SemanticKind::Summary, "a summary", SemanticSource::GeneratedSummary));
                }
                let n = nodes.len();
                g.attach_semantics(&m, nodes).unwrap();
                assert_eq!(g.semantic_count(), before + n);
            }
            Op::Link => {
                let m = live.choose(rng).unwrap().clone();
                let label = labels.choose(rng).unwrap();
                let edges = g.edges().count();
                let id = g.link_interest(&m, label, InterestCategory::Activity).unwrap();
                assert!(g.members_of(&id).unwrap().contains(&m));
                assert!(g.edges().count() >= edges);
            }
            Op::Delete => {
                let m = live.choose(rng).unwrap().clone();
                g.delete_memory(&m).unwrap();
                assert!(g.memory(&m).is_none());
            }
        }
    }
    g
}

/// Members of any interest in `subset`, by scanning every edge.
pub fn brute_force_members(g: &RelationalMemoryGraph, subset: &BTreeSet<InterestId>) -> BTreeSet<MemoryId> {
    g.edges()
        .filter(|(_, i)| subset.contains(i))
        .map(|(m, _)| m.clone())
        .collect()
}

/// Cosine computed from raw values, independent of the stored norms.
pub fn raw_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Full sort of every entry: score descending, chunk id ascending.
pub fn exhaustive_top_k(index: &VectorIndex, query: &[f64], k: usize) -> Vec<(ChunkId, f64)> {
    let mut all: Vec<(ChunkId, f64)> = index
        .entries()
        .iter()
        .map(|e| (e.chunk_id.clone(), raw_cosine(e.vector.values(), query)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Random vectors with deliberate duplicates and zero vectors so ties occur.
pub fn random_index<R: Rng>(rng: &mut R, n: usize, dim: usize) -> VectorIndex {
    let mut index = VectorIndex::new(dim, memgraph::rag::Variant::V2);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut previous: Option<Vec<f64>> = None;
    for id in ids {
        let values: Vec<f64> = match (rng.gen_range(0..10), &previous) {
            (0, Some(p)) => p.clone(),
            (1, _) => vec![0.0; dim],
            (2, _) => (0..dim).map(|_| f64::from(rng.gen_range(0..3u8))).collect(),
            _ => (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        previous = Some(values.clone());
        index
            .insert(memgraph::rag::IndexEntry {
                chunk_id: ChunkId::from(format!("c-{id:05}").as_str()),
                source_memory_ids: BTreeSet::from([MemoryId::from_sequence(id as u64 + 1)]),
                char_span: (0, 1),
                text: "t".into(),
                vector: EmbeddingVector::new(values),
            })
            .unwrap();
    }
    index
}

pub fn check_top_k(index: &VectorIndex, query: &[f64], k: usize) -> Result<(), String> {
    let got = index
        .top_k(&EmbeddingVector::new(query.to_vec()), k)
        .map_err(|e| e.to_string())?;
    let want = exhaustive_top_k(index, query, k);
    if got.len() != want.len() {
        return Err(format!("length {} vs oracle {}", got.len(), want.len()));
    }
    for (g, (id, score)) in got.iter().zip(&want) {
        if &g.chunk_id != id {
            return Err(format!("order differs: {} vs {}", g.chunk_id, id));
        }
        if (g.score - score).abs() > 1e-9 || !(-1.0..=1.0).contains(&g.score) {
            return Err(format!("score {} vs {}", g.score, score));
        }
    }
    Ok(())
}

/// Set arithmetic written out longhand.
pub fn naive_scores(retrieved: &BTreeSet<u32>, relevant: &BTreeSet<u32>) -> (f64, f64, f64) {
    let mut hits = 0usize;
    for r in retrieved {
        if relevant.iter().any(|x| x == r) {
            hits += 1;
        }
    }
    let p = if retrieved.is_empty() { 0.0 } else { hits as f64 / retrieved.len() as f64 };
    let r = if relevant.is_empty() {
        if retrieved.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        hits as f64 / relevant.len() as f64
    };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Table 2 rows: (label, precision %, recall %, printed F1 %).
pub const TABLE2: [(&str, f64, f64, f64); 4] = [
    ("graph", 92.86, 93.33, 93.09),
    ("rag-v1", 71.42, 76.92, 74.07),
    ("rag-v2", 78.57, 84.61, 81.48),
    ("rag-v3", 78.57, 80.00, 79.28),
];
