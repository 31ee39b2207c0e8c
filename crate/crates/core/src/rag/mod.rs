//! Baseline RAG pipelines: chunk, embed, top-k, generate.
//!
//! * v1: fixed windows over all summaries joined by newlines
//! * v2: one chunk per memory summary
//! * v3: one chunk per rendered conversation

mod chunking;
mod embedding;
mod index;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, MemoryId, RelationalMemoryGraph};
use crate::llm::{LlmError, LlmProvider, ProviderError, DEFAULT_MAX_OUTPUT, DEFAULT_RETRIES};
use crate::retrieval::{
    cited_ids, generate_items, render_items, ContextBlock, RetrievalOutcome, RetrievalQuery,
    NO_MEMORY_MESSAGE,
};

pub use chunking::{chunk_by_memory, chunk_fixed, summary_document, Chunk, ChunkId, ChunkMode, Span};
pub use embedding::{cosine, EmbeddingProvider, EmbeddingVector, HashedBagOfWords};
pub use index::{IndexEntry, ScoredChunk, VectorIndex};

pub const DEFAULT_CHUNK_LENGTH: usize = 256;
pub const DEFAULT_OVERLAP: usize = 64;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_DIMENSION: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
    V3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::V1, Variant::V2, Variant::V3];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = RagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            other => Err(RagError::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub variant: Variant,
    pub chunk_length: usize,
    pub overlap: usize,
    pub top_k: usize,
    pub dimension: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            variant: Variant::V2,
            chunk_length: DEFAULT_CHUNK_LENGTH,
            overlap: DEFAULT_OVERLAP,
            top_k: DEFAULT_TOP_K,
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl RagConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RagError> {
        if self.variant == Variant::V1 && (self.chunk_length == 0 || self.overlap >= self.chunk_length) {
            return Err(RagError::InvalidConfig(format!(
                "overlap {} must be smaller than chunk length {}",
                self.overlap, self.chunk_length
            )));
        }
        if self.top_k == 0 {
            return Err(RagError::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.dimension == 0 {
            return Err(RagError::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("invalid rag config: {0}")]
    InvalidConfig(String),
    #[error("source document is empty")]
    EmptyDocument,
    #[error("memory {0} has no summary")]
    MissingSummary(MemoryId),
    #[error("vector dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("chunk {0} is already indexed")]
    DuplicateChunk(ChunkId),
    #[error("index was built for {index}, not {requested}")]
    VariantMismatch { index: Variant, requested: Variant },
    #[error("index references memory {0}, which is not in the graph")]
    StaleIndex(MemoryId),
    #[error("index file is corrupt: {0}")]
    Corrupt(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("embedding provider failed: {0}")]
    Embedding(#[from] ProviderError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Chunks for `config.variant`; an empty graph yields no chunks.
pub fn build_chunks(graph: &RelationalMemoryGraph, config: &RagConfig) -> Result<Vec<Chunk>, RagError> {
    config.validate()?;
    match config.variant {
        Variant::V1 => {
            let (doc, spans) = summary_document(graph)?;
            if doc.is_empty() && spans.is_empty() {
                return Ok(Vec::new());
            }
            chunk_fixed(&doc, &spans, config.chunk_length, config.overlap)
        }
        Variant::V2 => chunk_by_memory(graph, ChunkMode::Summary),
        Variant::V3 => chunk_by_memory(graph, ChunkMode::Conversation),
    }
}

#[derive(Clone)]
pub struct RagPipeline {
    config: RagConfig,
    llm: Arc<dyn LlmProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    retries: u32,
    max_output_size: usize,
}

impl RagPipeline {
    /// Pipeline with the hashed bag-of-words embedder at `config.dimension`.
    pub fn new(config: RagConfig, llm: Arc<dyn LlmProvider>) -> Result<Self, RagError> {
        config.validate()?;
        let embedder = Arc::new(HashedBagOfWords::new(config.dimension));
        Self::with_embedder(config, llm, embedder)
    }

    pub fn with_embedder(
        config: RagConfig,
        llm: Arc<dyn LlmProvider>,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, RagError> {
        config.validate()?;
        if embedder.dimension() != config.dimension {
            return Err(RagError::DimensionMismatch {
                expected: config.dimension,
                found: embedder.dimension(),
            });
        }
        Ok(Self {
            config,
            llm,
            embedder,
            retries: DEFAULT_RETRIES,
            max_output_size: DEFAULT_MAX_OUTPUT,
        })
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn config(&self) -> &RagConfig {
        &self.config
    }

    pub fn build_index(&self, graph: &RelationalMemoryGraph) -> Result<VectorIndex, RagError> {
        let mut index = VectorIndex::new(self.config.dimension, self.config.variant);
        for chunk in build_chunks(graph, &self.config)? {
            let vector = self.embedder.embed(&chunk.text)?;
            index.insert_chunk(&chunk, vector)?;
        }
        Ok(index)
    }

    pub fn answer(
        &self,
        graph: &RelationalMemoryGraph,
        index: &VectorIndex,
        query: &RetrievalQuery,
    ) -> Result<RetrievalOutcome, RagError> {
        if query.text.trim().is_empty() {
            return Err(RagError::EmptyQuery);
        }
        if index.variant() != self.config.variant {
            return Err(RagError::VariantMismatch {
                index: index.variant(),
                requested: self.config.variant,
            });
        }
        let text = query.effective_text();
        let qv = self.embedder.embed(&text)?;
        let hits = index.top_k(&qv, self.config.top_k)?;

        let mut retrieved: Vec<MemoryId> = Vec::new();
        let mut blocks = Vec::new();
        for hit in &hits {
            let entry = index.entry(&hit.chunk_id).expect("hit comes from the index");
            for id in &entry.source_memory_ids {
                if graph.memory(id).is_none() {
                    return Err(RagError::StaleIndex(id.clone()));
                }
                if !retrieved.contains(id) {
                    retrieved.push(id.clone());
                }
            }
            blocks.push(ContextBlock {
                refs: entry.source_memory_ids.iter().cloned().collect(),
                text: entry.text.clone(),
            });
        }
        if retrieved.is_empty() {
            return Ok(RetrievalOutcome::no_memory(BTreeSet::new()));
        }
        let allowed: BTreeSet<MemoryId> = retrieved.iter().cloned().collect();
        let items = generate_items(self.llm.as_ref(), self.retries, self.max_output_size, &text, &blocks, &allowed)?;
        Ok(RetrievalOutcome {
            selected_interests: BTreeSet::new(),
            retrieved_memories: retrieved,
            response_text: if items.is_empty() {
                NO_MEMORY_MESSAGE.to_owned()
            } else {
                render_items(&items, None)
            },
            cited_memory_ids: cited_ids(&items),
            response_items: items,
            needs_clarification: false,
            clarification_question: None,
        })
    }
}
