//! Capture-time extraction: conversation and media metadata in, semantic
//! nodes, a summary and interest links out.
//!
//! Media analysis arrives pre-computed and maps one-to-one onto semantic
//! nodes tagged `media_analysis`. The provider is asked twice per memory: once
//! for conversation facts plus a summary, once for the interests the memory
//! is centered around.

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::graph::{
    ConversationTurn, GraphError, InterestCategory, MemoryId, MemoryNode, RelationalMemoryGraph,
    Role, SemanticKind, SemanticNode, SemanticSource,
};
use crate::llm::{
    complete_structured, InterestExtractionOutput, LlmError, LlmProvider, PromptTemplate,
    SemanticExtractionOutput, DEFAULT_MAX_OUTPUT, DEFAULT_RETRIES,
};

/// Output of the (out of scope) vision models for one media item.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaMetadata {
    pub media_ref: String,
    #[serde(default)]
    pub detected_objects: Vec<String>,
    #[serde(default)]
    pub detected_scene: Option<String>,
    #[serde(default)]
    pub detected_emotions: Vec<String>,
    #[serde(default)]
    pub geolocation_estimate: Option<String>,
}

impl MediaMetadata {
    /// Semantic facts carried by this media item, in field order.
    pub fn facts(&self) -> Vec<(SemanticKind, String)> {
        let mut out: Vec<(SemanticKind, String)> = self
            .detected_objects
            .iter()
            .map(|o| (SemanticKind::Object, o.clone()))
            .collect();
        out.extend(self.detected_scene.iter().map(|s| (SemanticKind::Scene, s.clone())));
        out.extend(
            self.detected_emotions
                .iter()
                .map(|e| (SemanticKind::Emotion, e.clone())),
        );
        out.extend(
            self.geolocation_estimate
                .iter()
                .map(|g| (SemanticKind::Location, g.clone())),
        );
        out.retain(|(_, v)| !v.trim().is_empty());
        out
    }

    fn render(&self) -> String {
        self.facts()
            .iter()
            .map(|(kind, value)| format!("{} {}: {}", self.media_ref, kind.as_str(), one_line(value)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Everything needed to create one memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryCapture {
    pub created_at: DateTime<Utc>,
    pub conversation: Vec<ConversationTurn>,
    #[serde(default)]
    pub media: Vec<MediaMetadata>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSemantic {
    pub kind: SemanticKind,
    pub value: String,
    pub source: SemanticSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub semantics: Vec<ExtractedSemantic>,
    pub summary: String,
    pub interests: Vec<(String, InterestCategory)>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("conversation is empty")]
    EmptyConversation,
    #[error("conversation turn {0} has empty text")]
    EmptyTurn(usize),
    #[error("appended turns contain no user turn")]
    NoUserTurn,
    #[error("media item {0} has an empty media_ref")]
    EmptyMediaRef(usize),
    #[error("memory {0} has no semantics to extract interests from")]
    NoSemantics(MemoryId),
    #[error("extraction failed: {0}")]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One line per turn: `role: text`, with embedded newlines flattened.
pub fn render_conversation(turns: &[ConversationTurn]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", t.role.as_str(), one_line(&t.text)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone)]
pub struct Extractor {
    provider: Arc<dyn LlmProvider>,
    retries: u32,
    max_output_size: usize,
}

impl Extractor {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self {
            provider,
            retries: DEFAULT_RETRIES,
            max_output_size: DEFAULT_MAX_OUTPUT,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn provider(&self) -> &Arc<dyn LlmProvider> {
        &self.provider
    }

    /// Runs both extraction prompts. Pure with respect to any graph, so
    /// distinct memories can be extracted concurrently.
    pub fn extract_semantics(
        &self,
        conversation: &[ConversationTurn],
        media: &[MediaMetadata],
    ) -> Result<ExtractionResult, ExtractionError> {
        check_capture(conversation, media)?;
        let rendered = render_conversation(conversation);
        let media_text = media
            .iter()
            .map(MediaMetadata::render)
            .filter(|m| !m.is_empty())
            .collect::<Vec<_>>()
            .join("\n");
        let request = PromptTemplate::SEMANTIC_EXTRACTION.request(
            &[("media", &media_text), ("conversation", &rendered)],
            self.max_output_size,
        );
        let reply: SemanticExtractionOutput =
            complete_structured(self.provider.as_ref(), &request, self.retries, |_| Ok(()))?;

        let mut semantics: Vec<ExtractedSemantic> = media
            .iter()
            .flat_map(MediaMetadata::facts)
            .map(|(kind, value)| ExtractedSemantic {
                kind,
                value,
                source: SemanticSource::MediaAnalysis,
            })
            .collect();
        semantics.extend(reply.semantics.into_iter().map(|f| ExtractedSemantic {
            kind: f.kind,
            value: f.value.trim().to_owned(),
            source: SemanticSource::Conversation,
        }));
        let summary = reply.summary.trim().to_owned();

        let lines: Vec<(SemanticKind, &str)> = semantics
            .iter()
            .map(|s| (s.kind, s.value.as_str()))
            .chain([(SemanticKind::Summary, summary.as_str())])
            .collect();
        let interests = self.extract_interests(&lines, &rendered)?;
        Ok(ExtractionResult {
            semantics,
            summary,
            interests,
        })
    }

    fn extract_interests(
        &self,
        semantics: &[(SemanticKind, &str)],
        conversation: &str,
    ) -> Result<Vec<(String, InterestCategory)>, ExtractionError> {
        let lines = semantics
            .iter()
            .map(|(kind, value)| format!("{}: {}", kind.as_str(), one_line(value)))
            .collect::<Vec<_>>()
            .join("\n");
        let request = PromptTemplate::INTEREST_EXTRACTION.request(
            &[("semantics", &lines), ("conversation", conversation)],
            self.max_output_size,
        );
        let reply: InterestExtractionOutput =
            complete_structured(self.provider.as_ref(), &request, self.retries, |_| Ok(()))?;
        Ok(reply
            .interests
            .into_iter()
            .map(|i| (i.label, i.category))
            .collect())
    }

    /// Creates one memory from a capture. On any failure the graph is left
    /// exactly as it was.
    pub fn ingest_memory(
        &self,
        graph: &mut RelationalMemoryGraph,
        capture: &MemoryCapture,
    ) -> Result<MemoryId, ExtractionError> {
        let result = self.extract_semantics(&capture.conversation, &capture.media)?;
        apply_extraction(graph, capture, &result)
    }

    /// Adds a later conversation to an existing memory. Facts extracted from
    /// the new turns are appended as new semantic nodes (existing nodes are
    /// never edited, and the original summary is kept); new interests are
    /// linked. All-or-nothing.
    pub fn extend_memory(
        &self,
        graph: &mut RelationalMemoryGraph,
        memory: &MemoryId,
        turns: &[ConversationTurn],
    ) -> Result<(), ExtractionError> {
        if graph.memory(memory).is_none() {
            return Err(GraphError::UnknownMemory(memory.clone()).into());
        }
        check_capture(turns, &[])?;
        if !turns.iter().any(|t| t.role == Role::User) {
            return Err(ExtractionError::NoUserTurn);
        }
        let result = self.extract_semantics(turns, &[])?;
        let existing: BTreeSet<(SemanticKind, String)> = graph
            .semantics_of([memory])?
            .remove(memory)
            .unwrap_or_default()
            .iter()
            .map(|s| (s.kind, s.value.to_lowercase()))
            .collect();
        let mut staged = graph.clone();
        staged.append_conversation(memory, turns.to_vec())?;
        let mut seen = existing;
        let mut nodes = Vec::new();
        for s in &result.semantics {
            if s.kind == SemanticKind::Summary || s.value.trim().is_empty() {
                continue;
            }
            if seen.insert((s.kind, s.value.to_lowercase())) {
                nodes.push(staged.new_semantic(memory, s.kind, s.value.clone(), s.source));
            }
        }
        staged.attach_semantics(memory, nodes)?;
        for (label, category) in &result.interests {
            staged.link_interest(memory, label, *category)?;
        }
        *graph = staged;
        Ok(())
    }

    /// Replaces a memory's interest links with a fresh extraction over its
    /// stored semantics. Interests orphaned by the replacement are pruned.
    pub fn reextract_interests(
        &self,
        graph: &mut RelationalMemoryGraph,
        memory: &MemoryId,
    ) -> Result<(), ExtractionError> {
        let node = graph
            .memory(memory)
            .ok_or_else(|| GraphError::UnknownMemory(memory.clone()))?;
        let rendered = render_conversation(&node.conversation);
        let semantics = graph.semantics_of([memory])?.remove(memory).unwrap_or_default();
        if semantics.is_empty() {
            return Err(ExtractionError::NoSemantics(memory.clone()));
        }
        let lines: Vec<(SemanticKind, &str)> =
            semantics.iter().map(|s| (s.kind, s.value.as_str())).collect();
        let interests = self.extract_interests(&lines, &rendered)?;
        let mut staged = graph.clone();
        staged.replace_interests(memory, &interests)?;
        *graph = staged;
        Ok(())
    }
}

fn check_capture(
    conversation: &[ConversationTurn],
    media: &[MediaMetadata],
) -> Result<(), ExtractionError> {
    if conversation.is_empty() {
        return Err(ExtractionError::EmptyConversation);
    }
    if let Some(i) = conversation.iter().position(|t| t.text.trim().is_empty()) {
        return Err(ExtractionError::EmptyTurn(i));
    }
    if let Some(i) = media.iter().position(|m| m.media_ref.trim().is_empty()) {
        return Err(ExtractionError::EmptyMediaRef(i));
    }
    Ok(())
}

/// Writes an extraction into the graph as one new memory. All-or-nothing.
pub fn apply_extraction(
    graph: &mut RelationalMemoryGraph,
    capture: &MemoryCapture,
    result: &ExtractionResult,
) -> Result<MemoryId, ExtractionError> {
    check_capture(&capture.conversation, &capture.media)?;
    let mut staged = graph.clone();
    let id = staged.next_memory_id();
    staged.add_memory(MemoryNode {
        id: id.clone(),
        created_at: capture.created_at,
        media_refs: capture.media.iter().map(|m| m.media_ref.clone()).collect(),
        conversation: capture.conversation.clone(),
        user_id: staged.user_id().to_owned(),
    })?;

    let mut seen = BTreeSet::new();
    let mut nodes: Vec<SemanticNode> = Vec::new();
    for s in &result.semantics {
        if s.kind == SemanticKind::Summary || s.value.trim().is_empty() {
            continue;
        }
        if seen.insert((s.kind, s.source, s.value.to_lowercase())) {
            nodes.push(staged.new_semantic(&id, s.kind, s.value.clone(), s.source));
        }
    }
    nodes.push(staged.new_semantic(
        &id,
        SemanticKind::Summary,
        result.summary.clone(),
        SemanticSource::GeneratedSummary,
    ));
    staged.attach_semantics(&id, nodes)?;
    for (label, category) in &result.interests {
        staged.link_interest(&id, label, *category)?;
    }
    *graph = staged;
    Ok(id)
}
