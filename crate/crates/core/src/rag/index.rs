//! Exhaustive cosine vector index with JSON persistence.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::graph::MemoryId;

use super::chunking::{Chunk, ChunkId};
use super::embedding::{cosine, EmbeddingVector};
use super::{RagError, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub chunk_id: ChunkId,
    pub source_memory_ids: BTreeSet<MemoryId>,
    pub char_span: (usize, usize),
    pub text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChunk {
    pub chunk_id: ChunkId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorIndex {
    dimension: usize,
    variant: Variant,
    entries: Vec<IndexEntry>,
    #[serde(skip)]
    ids: HashSet<ChunkId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    dimension: usize,
    variant: Variant,
    entries: Vec<IndexEntry>,
}

// Heap entry ordered so that the *worst* kept result sits at the top.
struct Ranked<'a> {
    score: f64,
    id: &'a ChunkId,
    pos: usize,
}

impl Ranked<'_> {
    fn rank(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.id.cmp(other.id))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

impl VectorIndex {
    pub fn new(dimension: usize, variant: Variant) -> Self {
        Self {
            dimension,
            variant,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, id: &ChunkId) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| &e.chunk_id == id)
    }

    pub fn insert_chunk(&mut self, chunk: &Chunk, vector: EmbeddingVector) -> Result<(), RagError> {
        self.insert(IndexEntry {
            chunk_id: chunk.id.clone(),
            source_memory_ids: chunk.source_memory_ids.clone(),
            char_span: chunk.char_span,
            text: chunk.text.clone(),
            vector,
        })
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), RagError> {
        if entry.vector.dimension() != self.dimension {
            return Err(RagError::DimensionMismatch {
                expected: self.dimension,
                found: entry.vector.dimension(),
            });
        }
        if !self.ids.insert(entry.chunk_id.clone()) {
            return Err(RagError::DuplicateChunk(entry.chunk_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// The `k` best entries by cosine score, descending, ties by chunk id.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, RagError> {
        if query.dimension() != self.dimension {
            return Err(RagError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap: BinaryHeap<Ranked<'_>> = BinaryHeap::with_capacity(k + 1);
        for (pos, entry) in self.entries.iter().enumerate() {
            let candidate = Ranked {
                score: cosine(query, &entry.vector),
                id: &entry.chunk_id,
                pos,
            };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(worst) = heap.peek() {
                if candidate < *worst {
                    heap.pop();
                    heap.push(candidate);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|r| ScoredChunk {
                chunk_id: self.entries[r.pos].chunk_id.clone(),
                score: r.score,
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, RagError> {
        let file: IndexFile = serde_json::from_str(raw).map_err(|e| RagError::Corrupt(e.to_string()))?;
        let mut index = VectorIndex::new(file.dimension, file.variant);
        for entry in file.entries {
            index.insert(entry)?;
        }
        Ok(index)
    }
}
