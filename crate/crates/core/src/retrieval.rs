//! Interest-driven retrieval with a clarification loop.
//!
//! A request goes through three stages:
//!
//! 1. interest relevance: the provider sees every interest label and returns
//!    the relevant subset;
//! 2. traversal: every memory adjacent to a selected interest is collected,
//!    with no result cap, then restricted to the memories matching any
//!    participant/location/date detail the request names;
//! 3. response: the provider answers from those memories' semantic nodes and
//!    may only cite them.
//!
//! When nothing is found the fixed [`NO_MEMORY_MESSAGE`] is returned without
//! consulting the provider.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::graph::{
    GraphError, InterestId, InterestNode, MemoryId, RelationalMemoryGraph, SemanticKind,
    SemanticNode,
};
use crate::llm::{
    complete_structured, LlmError, LlmProvider, PromptTemplate, RelevanceOutput, ResponseItem,
    ResponseOutput, DEFAULT_MAX_OUTPUT, DEFAULT_RETRIES,
};
use crate::text::{contains_phrase, tokens};

pub const NO_MEMORY_MESSAGE: &str = "I couldn't find any memory matching that request.";
pub const DEFAULT_LABEL_BATCH: usize = 200;
pub const DEFAULT_SESSION_EXPIRY_SECS: i64 = 30 * 60;

/// Kinds a request can name to pick out specific memories.
pub const DETAIL_KINDS: [SemanticKind; 3] = [
    SemanticKind::Participant,
    SemanticKind::Location,
    SemanticKind::Datetime,
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One prior turn of a retrieval conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub query: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    #[serde(default)]
    pub session_id: Option<SessionId>,
    pub text: String,
    #[serde(default)]
    pub history: Vec<Exchange>,
}

impl RetrievalQuery {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            session_id: None,
            text: text.into(),
            history: Vec::new(),
        }
    }

    /// All queries of the conversation so far, oldest first.
    pub fn effective_text(&self) -> String {
        self.history
            .iter()
            .map(|e| e.query.as_str())
            .chain([self.text.as_str()])
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub selected_interests: BTreeSet<InterestId>,
    pub retrieved_memories: Vec<MemoryId>,
    pub response_text: String,
    pub response_items: Vec<ResponseItem>,
    pub cited_memory_ids: Vec<MemoryId>,
    pub needs_clarification: bool,
    pub clarification_question: Option<String>,
}

impl RetrievalOutcome {
    pub fn no_memory(selected_interests: BTreeSet<InterestId>) -> Self {
        Self {
            selected_interests,
            retrieved_memories: Vec::new(),
            response_text: NO_MEMORY_MESSAGE.to_owned(),
            response_items: Vec::new(),
            cited_memory_ids: Vec::new(),
            needs_clarification: false,
            clarification_question: None,
        }
    }

    /// Whether every citation is among the retrieved memories.
    pub fn is_grounded(&self) -> bool {
        let retrieved: BTreeSet<&MemoryId> = self.retrieved_memories.iter().collect();
        self.cited_memory_ids.iter().all(|id| retrieved.contains(id))
            && self
                .response_items
                .iter()
                .flat_map(|i| &i.memory_ids)
                .all(|id| retrieved.contains(id))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("unknown or expired session {0}")]
    UnknownSession(SessionId),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Canonical detail values (participant, location, datetime) per memory.
fn details_of(semantics: &[SemanticNode]) -> BTreeSet<Vec<String>> {
    semantics
        .iter()
        .filter(|s| DETAIL_KINDS.contains(&s.kind))
        .map(|s| tokens(&s.value))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Detail values that the query names and at least one candidate carries.
///
/// Values equal to a label in `selected_labels` are skipped: the interest
/// that found the candidates does not tell them apart.
pub fn matched_details(
    query_text: &str,
    candidates: &[MemoryId],
    semantics: &BTreeMap<MemoryId, Vec<SemanticNode>>,
    selected_labels: &BTreeSet<String>,
) -> BTreeSet<Vec<String>> {
    let query = tokens(query_text);
    let excluded: BTreeSet<Vec<String>> = selected_labels.iter().map(|l| tokens(l)).collect();
    candidates
        .iter()
        .filter_map(|id| semantics.get(id))
        .flat_map(|s| details_of(s))
        .filter(|value| !excluded.contains(value) && contains_phrase(&query, value))
        .collect()
}

/// Candidates carrying every one of `details`.
pub fn narrow_to_details(
    candidates: &[MemoryId],
    semantics: &BTreeMap<MemoryId, Vec<SemanticNode>>,
    details: &BTreeSet<Vec<String>>,
) -> Vec<MemoryId> {
    candidates
        .iter()
        .filter(|id| {
            let own = semantics.get(*id).map(|s| details_of(s)).unwrap_or_default();
            details.iter().all(|d| own.contains(d))
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clarification {
    pub needs_clarification: bool,
    pub question: Option<String>,
}

impl Clarification {
    fn direct() -> Self {
        Self {
            needs_clarification: false,
            question: None,
        }
    }
}

/// Asks for more detail when several memories match and the request names
/// none of their participants, places or dates (beyond the selected
/// interests themselves).
pub fn decide_clarification(
    query_text: &str,
    candidates: &[MemoryId],
    semantics: &BTreeMap<MemoryId, Vec<SemanticNode>>,
    selected_labels: &BTreeSet<String>,
) -> Clarification {
    if candidates.len() <= 1
        || !matched_details(query_text, candidates, semantics, selected_labels).is_empty()
    {
        return Clarification::direct();
    }
    let prompts: Vec<&str> = DETAIL_KINDS
        .iter()
        .filter(|kind| {
            let per_memory: BTreeSet<BTreeSet<String>> = candidates
                .iter()
                .map(|id| {
                    semantics
                        .get(id)
                        .into_iter()
                        .flatten()
                        .filter(|s| s.kind == **kind)
                        .map(|s| s.value.to_lowercase())
                        .collect()
                })
                .collect();
            per_memory.len() > 1
        })
        .map(|kind| match kind {
            SemanticKind::Participant => "who was there",
            SemanticKind::Location => "where it happened",
            _ => "when it was",
        })
        .collect();
    let lead = format!("I found {} memories that could match.", candidates.len());
    let question = match prompts.as_slice() {
        [] => format!("{lead} Which one are you thinking of?"),
        [one] => format!("{lead} Can you tell me {one}?"),
        [init @ .., last] => format!("{lead} Can you tell me {} or {last}?", init.join(", ")),
    };
    Clarification {
        needs_clarification: true,
        question: Some(question),
    }
}

/// Numbered list, one line per item: `1. <text> (memory <ids>)`.
pub fn render_items(items: &[ResponseItem], limit: Option<usize>) -> String {
    let shown = limit.unwrap_or(items.len()).min(items.len());
    let mut lines: Vec<String> = items[..shown]
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let ids = item
                .memory_ids
                .iter()
                .map(MemoryId::as_str)
                .collect::<Vec<_>>()
                .join(", ");
            format!("{}. {} (memory {ids})", i + 1, item.text)
        })
        .collect();
    if shown < items.len() {
        lines.push(format!("...and {} more", items.len() - shown));
    }
    lines.join("\n")
}

/// Citations in first-appearance order.
pub fn cited_ids(items: &[ResponseItem]) -> Vec<MemoryId> {
    let mut seen = BTreeSet::new();
    items
        .iter()
        .flat_map(|i| &i.memory_ids)
        .filter(|id| seen.insert(*id))
        .cloned()
        .collect()
}

/// A single context block handed to response generation.
#[derive(Debug, Clone)]
pub struct ContextBlock {
    pub refs: Vec<MemoryId>,
    pub text: String,
}

/// Asks the provider for a response over `blocks`, accepting only citations
/// drawn from `allowed`.
pub fn generate_items(
    provider: &dyn LlmProvider,
    retries: u32,
    max_output_size: usize,
    query_text: &str,
    blocks: &[ContextBlock],
    allowed: &BTreeSet<MemoryId>,
) -> Result<Vec<ResponseItem>, LlmError> {
    let context = blocks
        .iter()
        .map(|b| {
            let refs = b.refs.iter().map(MemoryId::as_str).collect::<Vec<_>>().join(", ");
            format!("### refs: {refs}\n{}", b.text)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let request = PromptTemplate::RESPONSE_GENERATION
        .request(&[("query", query_text), ("context", &context)], max_output_size);
    let reply: ResponseOutput = complete_structured(provider, &request, retries, |out: &ResponseOutput| {
        match out
            .items
            .iter()
            .flat_map(|i| &i.memory_ids)
            .find(|id| !allowed.contains(*id))
        {
            Some(id) => Err(format!("response cites {id}, which was not retrieved")),
            None => Ok(()),
        }
    })?;
    Ok(reply.items)
}

#[derive(Clone)]
pub struct Retriever {
    provider: Arc<dyn LlmProvider>,
    retries: u32,
    max_output_size: usize,
    label_batch: usize,
    presentation_limit: Option<usize>,
}

impl Retriever {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self {
            provider,
            retries: DEFAULT_RETRIES,
            max_output_size: DEFAULT_MAX_OUTPUT,
            label_batch: DEFAULT_LABEL_BATCH,
            presentation_limit: None,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_label_batch(mut self, batch: usize) -> Self {
        self.label_batch = batch.max(1);
        self
    }

    /// Limits how many items are written into `response_text`. Retrieved and
    /// cited sets are never truncated.
    pub fn with_presentation_limit(mut self, limit: Option<usize>) -> Self {
        self.presentation_limit = limit;
        self
    }

    /// Relevant subset of `interests` for the query, batched by label count.
    pub fn filter_interests(
        &self,
        query_text: &str,
        interests: &[&InterestNode],
    ) -> Result<BTreeSet<InterestId>, RetrievalError> {
        let mut selected = BTreeSet::new();
        for batch in interests.chunks(self.label_batch) {
            let listed: BTreeSet<&InterestId> = batch.iter().map(|i| &i.id).collect();
            let lines = batch
                .iter()
                .map(|i| format!("{} | {} | {:?}", i.id, i.label, i.category).to_lowercase())
                .collect::<Vec<_>>()
                .join("\n");
            let request = PromptTemplate::RELEVANCE_FILTER
                .request(&[("query", query_text), ("interests", &lines)], self.max_output_size);
            let reply: RelevanceOutput =
                complete_structured(self.provider.as_ref(), &request, self.retries, |out: &RelevanceOutput| {
                    match out.relevant_interest_ids.iter().find(|id| !listed.contains(id)) {
                        Some(id) => Err(format!("unknown interest {id}")),
                        None => Ok(()),
                    }
                })?;
            selected.extend(reply.relevant_interest_ids);
        }
        Ok(selected)
    }

    pub fn retrieve(
        &self,
        graph: &RelationalMemoryGraph,
        query: &RetrievalQuery,
    ) -> Result<RetrievalOutcome, RetrievalError> {
        if query.text.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let text = query.effective_text();
        let interests: Vec<&InterestNode> = graph.interests().collect();
        let selected = self.filter_interests(&text, &interests)?;
        let traversal: Vec<MemoryId> = graph.memories_for_interests(&selected)?.into_iter().collect();
        let semantics = graph.semantics_of(&traversal)?;

        let labels: BTreeSet<String> = selected
            .iter()
            .filter_map(|id| graph.interest(id))
            .map(|i| i.label.clone())
            .collect();
        let details = matched_details(&text, &traversal, &semantics, &labels);
        let mut memories = if details.is_empty() {
            traversal
        } else {
            narrow_to_details(&traversal, &semantics, &details)
        };
        if memories.is_empty() {
            return Ok(RetrievalOutcome::no_memory(selected));
        }
        memories.sort_by(|a, b| {
            let created = |id: &MemoryId| graph.memory(id).map(|m| m.created_at);
            created(b).cmp(&created(a)).then_with(|| a.cmp(b))
        });

        let clarification = decide_clarification(&text, &memories, &semantics, &labels);
        let blocks: Vec<ContextBlock> = memories
            .iter()
            .map(|id| memory_block(graph, id, &semantics[id]))
            .collect();
        let allowed: BTreeSet<MemoryId> = memories.iter().cloned().collect();
        let items = generate_items(
            self.provider.as_ref(),
            self.retries,
            self.max_output_size,
            &text,
            &blocks,
            &allowed,
        )?;
        Ok(RetrievalOutcome {
            selected_interests: selected,
            retrieved_memories: memories,
            response_text: if items.is_empty() {
                NO_MEMORY_MESSAGE.to_owned()
            } else {
                render_items(&items, self.presentation_limit)
            },
            cited_memory_ids: cited_ids(&items),
            response_items: items,
            needs_clarification: clarification.needs_clarification,
            clarification_question: clarification.question,
        })
    }

    /// Re-runs retrieval over the session's queries plus `followup` and
    /// records the new turn.
    pub fn refine(
        &self,
        graph: &RelationalMemoryGraph,
        session: &mut SessionState,
        followup: &str,
    ) -> Result<RetrievalOutcome, RetrievalError> {
        let query = RetrievalQuery {
            session_id: Some(session.session_id.clone()),
            text: followup.to_owned(),
            history: session.history.clone(),
        };
        let outcome = self.retrieve(graph, &query)?;
        session.record(followup, &outcome);
        Ok(outcome)
    }
}

fn memory_block(
    graph: &RelationalMemoryGraph,
    id: &MemoryId,
    semantics: &[SemanticNode],
) -> ContextBlock {
    let headline = graph
        .summary_of(id)
        .map(str::to_owned)
        .or_else(|| {
            graph
                .memory(id)
                .and_then(|m| m.conversation.first())
                .map(|t| t.text.clone())
        })
        .unwrap_or_else(|| id.to_string());
    let mut lines = vec![headline.split_whitespace().collect::<Vec<_>>().join(" ")];
    lines.extend(
        semantics
            .iter()
            .filter(|s| s.kind != SemanticKind::Summary)
            .map(|s| format!("{}: {}", s.kind.as_str(), s.value)),
    );
    ContextBlock {
        refs: vec![id.clone()],
        text: lines.join("\n"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub history: Vec<Exchange>,
    pub selected_interests: BTreeSet<InterestId>,
    pub turns: u32,
    pub last_active: DateTime<Utc>,
}

impl SessionState {
    pub fn new(session_id: SessionId, now: DateTime<Utc>) -> Self {
        Self {
            session_id,
            history: Vec::new(),
            selected_interests: BTreeSet::new(),
            turns: 0,
            last_active: now,
        }
    }

    fn record(&mut self, query: &str, outcome: &RetrievalOutcome) {
        let mut response = outcome.response_text.clone();
        if let Some(q) = &outcome.clarification_question {
            response.push('\n');
            response.push_str(q);
        }
        self.history.push(Exchange {
            query: query.to_owned(),
            response,
        });
        self.selected_interests = outcome.selected_interests.clone();
        self.turns += 1;
    }
}

/// In-memory sessions with idle expiry.
#[derive(Debug, Clone)]
pub struct SessionStore {
    sessions: HashMap<SessionId, SessionState>,
    expiry: TimeDelta,
    issued: u64,
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(TimeDelta::seconds(DEFAULT_SESSION_EXPIRY_SECS))
    }
}

impl SessionStore {
    pub fn new(expiry: TimeDelta) -> Self {
        Self {
            sessions: HashMap::new(),
            expiry,
            issued: 0,
        }
    }

    pub fn open(&mut self, now: DateTime<Utc>) -> SessionId {
        self.issued += 1;
        let id = SessionId(format!("session-{:06}", self.issued));
        self.sessions
            .insert(id.clone(), SessionState::new(id.clone(), now));
        id
    }

    /// A live session, refreshed to `now`. Expired sessions are dropped.
    pub fn get_mut(
        &mut self,
        id: &SessionId,
        now: DateTime<Utc>,
    ) -> Result<&mut SessionState, RetrievalError> {
        let expired = self
            .sessions
            .get(id)
            .is_some_and(|s| now - s.last_active > self.expiry);
        if expired {
            self.sessions.remove(id);
        }
        let session = self
            .sessions
            .get_mut(id)
            .ok_or_else(|| RetrievalError::UnknownSession(id.clone()))?;
        session.last_active = now;
        Ok(session)
    }

    pub fn close(&mut self, id: &SessionId) -> Option<SessionState> {
        self.sessions.remove(id)
    }

    pub fn sweep(&mut self, now: DateTime<Utc>) {
        let expiry = self.expiry;
        self.sessions.retain(|_, s| now - s.last_active <= expiry);
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}
