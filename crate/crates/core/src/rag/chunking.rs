//! Fixed-size (v1) and memory-aligned (v2, v3) chunking.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::extraction::render_conversation;
use crate::graph::{MemoryId, RelationalMemoryGraph};

use super::{RagError, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMode {
    Summary,
    Conversation,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(String);

impl ChunkId {
    pub fn new(variant: Variant, seq: usize) -> Self {
        Self(format!("{variant}-chunk-{seq:06}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ChunkId {
    fn from(raw: &str) -> Self {
        Self(raw.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub text: String,
    pub source_memory_ids: BTreeSet<MemoryId>,
    pub variant: Variant,
    /// Character (not byte) offsets into the variant's source document.
    pub char_span: (usize, usize),
}

/// A memory's character range inside a source document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub memory: MemoryId,
    pub start: usize,
    pub end: usize,
}

/// Summaries joined by a newline, in memory id order, with their spans.
pub fn summary_document(graph: &RelationalMemoryGraph) -> Result<(String, Vec<Span>), RagError> {
    let mut doc = String::new();
    let mut spans = Vec::new();
    let mut offset = 0;
    for memory in graph.memories() {
        let summary = graph
            .summary_of(&memory.id)
            .ok_or_else(|| RagError::MissingSummary(memory.id.clone()))?;
        if !spans.is_empty() {
            doc.push('\n');
            offset += 1;
        }
        let len = summary.chars().count();
        doc.push_str(summary);
        spans.push(Span {
            memory: memory.id.clone(),
            start: offset,
            end: offset + len,
        });
        offset += len;
    }
    Ok((doc, spans))
}

/// Windows of `l` characters advancing by `l - overlap`, stopping at the
/// first window that reaches the end of the document.
pub fn chunk_fixed(document: &str, spans: &[Span], l: usize, overlap: usize) -> Result<Vec<Chunk>, RagError> {
    if document.is_empty() {
        return Err(RagError::EmptyDocument);
    }
    if l == 0 || overlap >= l {
        return Err(RagError::InvalidConfig(format!(
            "overlap {overlap} must be smaller than chunk length {l}"
        )));
    }
    let chars: Vec<char> = document.chars().collect();
    let stride = l - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + l).min(chars.len());
        let mut sources: BTreeSet<MemoryId> = spans
            .iter()
            .filter(|s| s.start < end && start < s.end)
            .map(|s| s.memory.clone())
            .collect();
        if sources.is_empty() {
            // Only separator characters; attribute to the preceding memory.
            if let Some(prev) = spans.iter().filter(|s| s.end <= start).max_by_key(|s| s.end) {
                sources.insert(prev.memory.clone());
            }
        }
        chunks.push(Chunk {
            id: ChunkId::new(Variant::V1, chunks.len() + 1),
            text: chars[start..end].iter().collect(),
            source_memory_ids: sources,
            variant: Variant::V1,
            char_span: (start, end),
        });
        if end == chars.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// One chunk per memory, in memory id order.
pub fn chunk_by_memory(graph: &RelationalMemoryGraph, mode: ChunkMode) -> Result<Vec<Chunk>, RagError> {
    let variant = match mode {
        ChunkMode::Summary => Variant::V2,
        ChunkMode::Conversation => Variant::V3,
    };
    let mut chunks = Vec::new();
    let mut offset = 0;
    for memory in graph.memories() {
        let text = match mode {
            ChunkMode::Summary => graph
                .summary_of(&memory.id)
                .ok_or_else(|| RagError::MissingSummary(memory.id.clone()))?
                .to_owned(),
            ChunkMode::Conversation => render_conversation(&memory.conversation),
        };
        if !chunks.is_empty() {
            offset += 1;
        }
        let len = text.chars().count();
        chunks.push(Chunk {
            id: ChunkId::new(variant, chunks.len() + 1),
            text,
            source_memory_ids: BTreeSet::from([memory.id.clone()]),
            variant,
            char_span: (offset, offset + len),
        });
        offset += len;
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(n: u64, start: usize, end: usize) -> Span {
        Span {
            memory: MemoryId::from_sequence(n),
            start,
            end,
        }
    }

    #[test]
    fn stride_enumeration() {
        let chunks = chunk_fixed("0123456789", &[span(1, 0, 10)], 4, 2).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.char_span).collect();
        assert_eq!(spans, [(0, 4), (2, 6), (4, 8), (6, 10)]);
        assert_eq!(chunks[3].text, "6789");
        assert_eq!(chunks[0].id.as_str(), "v1-chunk-000001");
    }

    #[test]
    fn long_window_gives_one_chunk() {
        let chunks = chunk_fixed("short", &[span(1, 0, 5)], 256, 64).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].char_span, (0, 5));
    }

    #[test]
    fn boundary_straddle() {
        let doc = format!("{}\n{}", "a".repeat(100), "b".repeat(100));
        let chunks = chunk_fixed(&doc, &[span(1, 0, 100), span(2, 101, 201)], 150, 0).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.char_span).collect();
        assert_eq!(spans, [(0, 150), (150, 201)]);
        // The window [0,150) is the one that crosses offset 100.
        assert_eq!(chunks[0].source_memory_ids.len(), 2);
        assert_eq!(chunks[1].source_memory_ids.len(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(chunk_fixed("", &[], 4, 2), Err(RagError::EmptyDocument)));
        assert!(matches!(chunk_fixed("abc", &[span(1, 0, 3)], 4, 4), Err(RagError::InvalidConfig(_))));
    }

    #[test]
    fn offsets_are_characters() {
        let chunks = chunk_fixed("ééééé", &[span(1, 0, 5)], 2, 0).unwrap();
        let texts: Vec<_> = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["éé", "éé", "é"]);
    }
}
