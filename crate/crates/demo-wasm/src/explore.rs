//! Plain-Rust logic behind the demo, testable without a browser.

use std::collections::BTreeMap;
use std::sync::Arc;

use memgraph::eval::{Benchmark, EvalCase, Strategy};
use memgraph::fixtures;
use memgraph::rag::{build_chunks, RagConfig, RagPipeline, Variant};
use memgraph::retrieval::{RetrievalOutcome, RetrievalQuery, Retriever};
use memgraph::{MockProvider, RelationalMemoryGraph};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkView {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub memories: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkReport {
    pub user: String,
    pub variant: Variant,
    pub memories: usize,
    pub chunks: Vec<ChunkView>,
    /// Memories whose text landed in more than one chunk.
    pub split_memories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub k: usize,
    pub strategy: Strategy,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub struct Explorer {
    mock: Arc<MockProvider>,
    graphs: BTreeMap<String, RelationalMemoryGraph>,
    cases: Vec<EvalCase>,
}

impl Default for Explorer {
    fn default() -> Self {
        Self::new()
    }
}

impl Explorer {
    pub fn new() -> Self {
        Self {
            mock: Arc::new(MockProvider::new()),
            graphs: fixtures::graphs(),
            cases: fixtures::eval_cases(),
        }
    }

    pub fn users(&self) -> Vec<String> {
        self.graphs.keys().cloned().collect()
    }

    pub fn cases(&self) -> &[EvalCase] {
        &self.cases
    }

    fn graph(&self, user: &str) -> Result<&RelationalMemoryGraph, String> {
        self.graphs.get(user).ok_or_else(|| format!("unknown user {user:?}"))
    }

    pub fn chunks(&self, user: &str, variant: Variant, length: usize, overlap: usize) -> Result<ChunkReport, String> {
        let g = self.graph(user)?;
        let config = RagConfig {
            variant,
            chunk_length: length,
            overlap,
            ..RagConfig::default()
        };
        config.validate().map_err(|e| e.to_string())?;
        let chunks = build_chunks(g, &config).map_err(|e| e.to_string())?;
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for c in &chunks {
            for m in &c.source_memory_ids {
                *seen.entry(m.to_string()).or_default() += 1;
            }
        }
        Ok(ChunkReport {
            user: user.to_owned(),
            variant,
            memories: g.memory_count(),
            chunks: chunks
                .into_iter()
                .map(|c| ChunkView {
                    id: c.id.to_string(),
                    start: c.char_span.0,
                    end: c.char_span.1,
                    memories: c.source_memory_ids.iter().map(|m| m.to_string()).collect(),
                    text: c.text,
                })
                .collect(),
            split_memories: seen.into_iter().filter(|(_, n)| *n > 1).map(|(m, _)| m).collect(),
        })
    }

    pub fn ask(&self, user: &str, query: &str, strategy: Strategy, k: usize) -> Result<RetrievalOutcome, String> {
        let g = self.graph(user)?;
        let query = RetrievalQuery::new(query);
        match strategy {
            Strategy::Graph => Retriever::new(self.mock.clone())
                .retrieve(g, &query)
                .map_err(|e| e.to_string()),
            Strategy::Rag(variant) => {
                let config = RagConfig {
                    variant,
                    top_k: k,
                    ..RagConfig::default()
                };
                let p = RagPipeline::new(config, self.mock.clone()).map_err(|e| e.to_string())?;
                let index = p.build_index(g).map_err(|e| e.to_string())?;
                p.answer(g, &index, &query).map_err(|e| e.to_string())
            }
        }
    }

    /// Micro-averaged scores for every strategy at k = 1..=max_k. The graph
    /// strategy has no k, so it is scored once and repeated.
    pub fn sweep(&self, max_k: usize) -> Result<Vec<SweepPoint>, String> {
        if max_k == 0 {
            return Err("max_k must be at least 1".into());
        }
        let graph_only = Benchmark::new(self.mock.clone(), RagConfig::default())
            .with_strategies(&[Strategy::Graph])
            .run(&self.graphs, &self.cases)
            .map_err(|e| e.to_string())?;
        let g = graph_only.summary(Strategy::Graph).expect("graph strategy ran").clone();
        let rag: Vec<Strategy> = Variant::ALL.iter().map(|v| Strategy::Rag(*v)).collect();
        let mut out = Vec::new();
        for k in 1..=max_k {
            out.push(SweepPoint {
                k,
                strategy: Strategy::Graph,
                precision: g.precision,
                recall: g.recall,
                f1: g.f1,
            });
            let report = Benchmark::new(self.mock.clone(), RagConfig { top_k: k, ..RagConfig::default() })
                .with_strategies(&rag)
                .run(&self.graphs, &self.cases)
                .map_err(|e| e.to_string())?;
            for s in report.strategies {
                out.push(SweepPoint {
                    k,
                    strategy: s.strategy,
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v1_splits_memories_and_v2_does_not() {
        let e = Explorer::new();
        let v1 = e.chunks("alex", Variant::V1, 64, 16).unwrap();
        assert!(v1.chunks.len() > v1.memories);
        assert!(!v1.split_memories.is_empty());
        let v2 = e.chunks("alex", Variant::V2, 64, 16).unwrap();
        assert_eq!(v2.chunks.len(), v2.memories);
        assert!(v2.split_memories.is_empty());
        assert!(e.chunks("alex", Variant::V1, 64, 64).is_err());
        assert!(e.chunks("nobody", Variant::V1, 64, 0).is_err());
    }

    #[test]
    fn ask_is_grounded_for_every_strategy() {
        let e = Explorer::new();
        for s in Strategy::ALL {
            let out = e.ask("chen", "Show me all my hikes", s, 3).unwrap();
            assert!(out.is_grounded());
            assert!(!out.retrieved_memories.is_empty());
        }
    }

    #[test]
    fn sweep_covers_every_k_and_agrees_with_a_direct_run() {
        let e = Explorer::new();
        let points = e.sweep(3).unwrap();
        assert_eq!(points.len(), 3 * Strategy::ALL.len());
        let direct = Benchmark::new(Arc::new(MockProvider::new()), RagConfig { top_k: 2, ..RagConfig::default() })
            .run(&fixtures::graphs(), e.cases())
            .unwrap();
        for p in points.iter().filter(|p| p.k == 2) {
            let s = direct.summary(p.strategy).unwrap();
            assert_eq!((p.precision, p.recall, p.f1), (s.precision, s.recall, s.f1));
        }
        assert!(e.sweep(0).is_err());
    }
}
