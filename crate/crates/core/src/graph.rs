//! The relational memory graph.
//!
//! Three vertex families live in one per-user graph:
//!
//! ```text
//!   semantic ── memory ── interest ── memory ── semantic
//!   semantic ──┘                  └── memory
//! ```
//!
//! Memory nodes own their semantic nodes (one parent each). Interest nodes are
//! shared hubs keyed by a canonical label, and are the only way two memories
//! become connected. Because edges are stored as typed pairs, the
//! memory-semantic and memory-interest families are the only edge kinds that
//! can exist; documents loaded from disk are still checked by [`validate`].
//!
//! [`validate`]: RelationalMemoryGraph::validate

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Current graph document version.
pub const GRAPH_DOCUMENT_VERSION: u32 = 1;

macro_rules! node_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub fn from_sequence(n: u64) -> Self {
                Self(format!("{}-{:06}", $prefix, n))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            /// Sequence number for engine-generated ids, `None` for foreign ids.
            pub fn sequence(&self) -> Option<u64> {
                self.0
                    .strip_prefix($prefix)
                    .and_then(|rest| rest.strip_prefix('-'))
                    .and_then(|digits| digits.parse().ok())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(raw: &str) -> Self {
                Self(raw.to_owned())
            }
        }
    };
}

node_id!(
    /// Identifier of a memory node, e.g. `mem-000017`.
    MemoryId,
    "mem"
);
node_id!(
    /// Identifier of a semantic node, e.g. `sem-000042`.
    SemanticId,
    "sem"
);
node_id!(
    /// Identifier of an interest node, e.g. `int-000003`.
    InterestId,
    "int"
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationTurn {
    pub role: Role,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

impl ConversationTurn {
    pub fn new(role: Role, text: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Self {
            role,
            text: text.into(),
            timestamp,
        }
    }

    pub fn user(text: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Self::new(Role::User, text, timestamp)
    }

    pub fn assistant(text: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Self::new(Role::Assistant, text, timestamp)
    }
}

/// One captured memory: media references plus the conversation that created it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryNode {
    pub id: MemoryId,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub media_refs: Vec<String>,
    pub conversation: Vec<ConversationTurn>,
    pub user_id: String,
}

impl MemoryNode {
    fn shape_error(&self) -> Option<String> {
        if self.conversation.is_empty() {
            return Some(format!("memory {} has an empty conversation", self.id));
        }
        self.conversation
            .iter()
            .position(|turn| turn.text.trim().is_empty())
            .map(|i| format!("memory {} turn {i} has empty text", self.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticKind {
    Participant,
    Activity,
    Story,
    Sentiment,
    Location,
    Datetime,
    Object,
    Scene,
    Emotion,
    Summary,
    Other,
}

impl SemanticKind {
    pub const ALL: [SemanticKind; 11] = [
        SemanticKind::Participant,
        SemanticKind::Activity,
        SemanticKind::Story,
        SemanticKind::Sentiment,
        SemanticKind::Location,
        SemanticKind::Datetime,
        SemanticKind::Object,
        SemanticKind::Scene,
        SemanticKind::Emotion,
        SemanticKind::Summary,
        SemanticKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticKind::Participant => "participant",
            SemanticKind::Activity => "activity",
            SemanticKind::Story => "story",
            SemanticKind::Sentiment => "sentiment",
            SemanticKind::Location => "location",
            SemanticKind::Datetime => "datetime",
            SemanticKind::Object => "object",
            SemanticKind::Scene => "scene",
            SemanticKind::Emotion => "emotion",
            SemanticKind::Summary => "summary",
            SemanticKind::Other => "other",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticSource {
    MediaAnalysis,
    Conversation,
    GeneratedSummary,
}

/// A single extracted fact owned by exactly one memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticNode {
    pub id: SemanticId,
    pub parent_memory: MemoryId,
    pub kind: SemanticKind,
    pub value: String,
    pub source: SemanticSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterestCategory {
    Hobby,
    Location,
    Activity,
    Preference,
    Date,
    Person,
    Other,
}

/// A deduplicated theme shared by one or more memories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterestNode {
    pub id: InterestId,
    pub label: String,
    pub display_label: String,
    pub category: InterestCategory,
}

/// Canonical form of an interest label.
///
/// Lowercases, strips leading and trailing punctuation and whitespace, and
/// collapses internal whitespace runs to a single space.
pub fn canonical_label(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("memory id {0} already exists")]
    DuplicateMemory(MemoryId),
    #[error("semantic id {0} already exists")]
    DuplicateSemantic(SemanticId),
    #[error("unknown memory {0}")]
    UnknownMemory(MemoryId),
    #[error("unknown interest {0}")]
    UnknownInterest(InterestId),
    #[error("semantic {semantic} belongs to {found}, expected {expected}")]
    ParentMismatch {
        semantic: SemanticId,
        expected: MemoryId,
        found: MemoryId,
    },
    #[error("memory {0} already has a summary node")]
    SummaryConflict(MemoryId),
    #[error("semantic {0} has an empty value")]
    EmptyValue(SemanticId),
    #[error("interest label {0:?} is empty after canonicalization")]
    EmptyLabel(String),
    #[error("invalid memory: {0}")]
    InvalidMemory(String),
    #[error("memory belongs to user {found}, graph belongs to {expected}")]
    UserMismatch { expected: String, found: String },
    #[error("graph document failed validation: {}", join_violations(.0))]
    InvalidDocument(Vec<Violation>),
    #[error("malformed graph document: {0}")]
    Json(#[from] serde_json::Error),
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// A broken graph invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    UnsupportedVersion { version: u32 },
    DuplicateMemoryId { memory: MemoryId },
    DuplicateSemanticId { semantic: SemanticId },
    DuplicateInterestId { interest: InterestId },
    InvalidMemory { memory: MemoryId, reason: String },
    ForeignMemory { memory: MemoryId, user_id: String },
    OrphanSemantic { semantic: SemanticId, parent: MemoryId },
    EmptySemanticValue { semantic: SemanticId },
    MultipleSummaries { memory: MemoryId, count: usize },
    EmptyInterestLabel { interest: InterestId },
    NonCanonicalLabel { interest: InterestId, label: String },
    DuplicateInterestLabel { label: String, interests: Vec<InterestId> },
    InterestWithoutMembers { interest: InterestId },
    DanglingEdge { memory: MemoryId, interest: InterestId },
    DuplicateEdge { memory: MemoryId, interest: InterestId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedVersion { version } => {
                write!(f, "unsupported document version {version}")
            }
            Violation::DuplicateMemoryId { memory } => write!(f, "duplicate memory id {memory}"),
            Violation::DuplicateSemanticId { semantic } => {
                write!(f, "duplicate semantic id {semantic}")
            }
            Violation::DuplicateInterestId { interest } => {
                write!(f, "duplicate interest id {interest}")
            }
            Violation::InvalidMemory { reason, .. } => f.write_str(reason),
            Violation::ForeignMemory { memory, user_id } => {
                write!(f, "memory {memory} belongs to user {user_id}")
            }
            Violation::OrphanSemantic { semantic, parent } => {
                write!(f, "semantic {semantic} points at missing memory {parent}")
            }
            Violation::EmptySemanticValue { semantic } => {
                write!(f, "semantic {semantic} has an empty value")
            }
            Violation::MultipleSummaries { memory, count } => {
                write!(f, "memory {memory} has {count} summary nodes")
            }
            Violation::EmptyInterestLabel { interest } => {
                write!(f, "interest {interest} has an empty label")
            }
            Violation::NonCanonicalLabel { interest, label } => {
                write!(f, "interest {interest} label {label:?} is not canonical")
            }
            Violation::DuplicateInterestLabel { label, interests } => {
                write!(f, "label {label:?} is shared by {} interests", interests.len())
            }
            Violation::InterestWithoutMembers { interest } => {
                write!(f, "interest {interest} has no member memories")
            }
            Violation::DanglingEdge { memory, interest } => {
                write!(f, "edge ({memory}, {interest}) has a missing endpoint")
            }
            Violation::DuplicateEdge { memory, interest } => {
                write!(f, "edge ({memory}, {interest}) appears twice")
            }
        }
    }
}

/// Wire form of a graph: arrays sorted by id, timestamps in RFC 3339.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub version: u32,
    pub user_id: String,
    pub memories: Vec<MemoryNode>,
    pub semantics: Vec<SemanticNode>,
    pub interests: Vec<InterestNode>,
    pub memory_interest_edges: Vec<(MemoryId, InterestId)>,
}

impl GraphDocument {
    /// Every invariant violation in this document, in a stable order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.version != GRAPH_DOCUMENT_VERSION {
            out.push(Violation::UnsupportedVersion {
                version: self.version,
            });
        }

        let mut memory_ids = BTreeSet::new();
        for memory in &self.memories {
            if !memory_ids.insert(&memory.id) {
                out.push(Violation::DuplicateMemoryId {
                    memory: memory.id.clone(),
                });
            }
            if let Some(reason) = memory.shape_error() {
                out.push(Violation::InvalidMemory {
                    memory: memory.id.clone(),
                    reason,
                });
            }
            if memory.user_id != self.user_id {
                out.push(Violation::ForeignMemory {
                    memory: memory.id.clone(),
                    user_id: memory.user_id.clone(),
                });
            }
        }

        let mut semantic_ids = BTreeSet::new();
        let mut summaries: BTreeMap<&MemoryId, usize> = BTreeMap::new();
        for semantic in &self.semantics {
            if !semantic_ids.insert(&semantic.id) {
                out.push(Violation::DuplicateSemanticId {
                    semantic: semantic.id.clone(),
                });
            }
            if !memory_ids.contains(&semantic.parent_memory) {
                out.push(Violation::OrphanSemantic {
                    semantic: semantic.id.clone(),
                    parent: semantic.parent_memory.clone(),
                });
            }
            if semantic.value.trim().is_empty() {
                out.push(Violation::EmptySemanticValue {
                    semantic: semantic.id.clone(),
                });
            }
            if semantic.kind == SemanticKind::Summary {
                *summaries.entry(&semantic.parent_memory).or_default() += 1;
            }
        }
        for (memory, count) in summaries {
            if count > 1 {
                out.push(Violation::MultipleSummaries {
                    memory: memory.clone(),
                    count,
                });
            }
        }

        let mut interest_ids = BTreeSet::new();
        let mut by_label: BTreeMap<&str, Vec<InterestId>> = BTreeMap::new();
        for interest in &self.interests {
            if !interest_ids.insert(&interest.id) {
                out.push(Violation::DuplicateInterestId {
                    interest: interest.id.clone(),
                });
            }
            if interest.label.is_empty() {
                out.push(Violation::EmptyInterestLabel {
                    interest: interest.id.clone(),
                });
            } else if canonical_label(&interest.label) != interest.label {
                out.push(Violation::NonCanonicalLabel {
                    interest: interest.id.clone(),
                    label: interest.label.clone(),
                });
            }
            by_label
                .entry(interest.label.as_str())
                .or_default()
                .push(interest.id.clone());
        }
        for (label, interests) in by_label {
            if interests.len() > 1 {
                out.push(Violation::DuplicateInterestLabel {
                    label: label.to_owned(),
                    interests,
                });
            }
        }

        let mut seen_edges = BTreeSet::new();
        let mut with_members = BTreeSet::new();
        for (memory, interest) in &self.memory_interest_edges {
            if !seen_edges.insert((memory, interest)) {
                out.push(Violation::DuplicateEdge {
                    memory: memory.clone(),
                    interest: interest.clone(),
                });
                continue;
            }
            if !memory_ids.contains(memory) || !interest_ids.contains(interest) {
                out.push(Violation::DanglingEdge {
                    memory: memory.clone(),
                    interest: interest.clone(),
                });
                continue;
            }
            with_members.insert(interest);
        }
        for interest in &interest_ids {
            if !with_members.contains(interest) {
                out.push(Violation::InterestWithoutMembers {
                    interest: (*interest).clone(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
struct Sequences {
    memory: u64,
    semantic: u64,
    interest: u64,
}

/// Unified per-user graph over memory, semantic and interest nodes.
///
/// Mutations follow a single-writer contract; clones are cheap enough to use
/// as snapshots for concurrent readers.
#[derive(Debug, Clone)]
pub struct RelationalMemoryGraph {
    user_id: String,
    memories: BTreeMap<MemoryId, MemoryNode>,
    semantics: BTreeMap<SemanticId, SemanticNode>,
    interests: BTreeMap<InterestId, InterestNode>,
    edges: BTreeSet<(MemoryId, InterestId)>,
    semantics_by_memory: BTreeMap<MemoryId, BTreeSet<SemanticId>>,
    interests_by_memory: BTreeMap<MemoryId, BTreeSet<InterestId>>,
    members: BTreeMap<InterestId, BTreeSet<MemoryId>>,
    label_index: HashMap<String, InterestId>,
    sequences: Sequences,
}

impl PartialEq for RelationalMemoryGraph {
    fn eq(&self, other: &Self) -> bool {
        self.user_id == other.user_id
            && self.memories == other.memories
            && self.semantics == other.semantics
            && self.interests == other.interests
            && self.edges == other.edges
    }
}

impl Eq for RelationalMemoryGraph {}

impl RelationalMemoryGraph {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            memories: BTreeMap::new(),
            semantics: BTreeMap::new(),
            interests: BTreeMap::new(),
            edges: BTreeSet::new(),
            semantics_by_memory: BTreeMap::new(),
            interests_by_memory: BTreeMap::new(),
            members: BTreeMap::new(),
            label_index: HashMap::new(),
            sequences: Sequences::default(),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn memory_count(&self) -> usize {
        self.memories.len()
    }

    pub fn semantic_count(&self) -> usize {
        self.semantics.len()
    }

    pub fn interest_count(&self) -> usize {
        self.interests.len()
    }

    /// Number of memory-interest edges.
    pub fn interest_edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn memory(&self, id: &MemoryId) -> Option<&MemoryNode> {
        self.memories.get(id)
    }

    pub fn contains_memory(&self, id: &MemoryId) -> bool {
        self.memories.contains_key(id)
    }

    pub fn memories(&self) -> impl Iterator<Item = &MemoryNode> {
        self.memories.values()
    }

    pub fn semantic(&self, id: &SemanticId) -> Option<&SemanticNode> {
        self.semantics.get(id)
    }

    pub fn semantics(&self) -> impl Iterator<Item = &SemanticNode> {
        self.semantics.values()
    }

    pub fn interest(&self, id: &InterestId) -> Option<&InterestNode> {
        self.interests.get(id)
    }

    pub fn interests(&self) -> impl Iterator<Item = &InterestNode> {
        self.interests.values()
    }

    pub fn interest_by_label(&self, label: &str) -> Option<&InterestNode> {
        self.label_index
            .get(&canonical_label(label))
            .and_then(|id| self.interests.get(id))
    }

    pub fn edges(&self) -> impl Iterator<Item = &(MemoryId, InterestId)> {
        self.edges.iter()
    }

    /// Memories adjacent to one interest, ascending by id.
    pub fn members_of(&self, interest: &InterestId) -> Option<&BTreeSet<MemoryId>> {
        self.members.get(interest)
    }

    /// Interests adjacent to one memory (empty for unknown ids).
    pub fn interests_of(&self, memory: &MemoryId) -> BTreeSet<InterestId> {
        self.interests_by_memory
            .get(memory)
            .cloned()
            .unwrap_or_default()
    }

    /// The summary value of a memory, if one has been attached.
    pub fn summary_of(&self, memory: &MemoryId) -> Option<&str> {
        self.semantics_by_memory.get(memory).and_then(|ids| {
            ids.iter()
                .filter_map(|id| self.semantics.get(id))
                .find(|s| s.kind == SemanticKind::Summary)
                .map(|s| s.value.as_str())
        })
    }

    /// Allocates a fresh memory id.
    pub fn next_memory_id(&mut self) -> MemoryId {
        loop {
            self.sequences.memory += 1;
            let id = MemoryId::from_sequence(self.sequences.memory);
            if !self.memories.contains_key(&id) {
                return id;
            }
        }
    }

    fn next_semantic_id(&mut self) -> SemanticId {
        loop {
            self.sequences.semantic += 1;
            let id = SemanticId::from_sequence(self.sequences.semantic);
            if !self.semantics.contains_key(&id) {
                return id;
            }
        }
    }

    fn next_interest_id(&mut self) -> InterestId {
        loop {
            self.sequences.interest += 1;
            let id = InterestId::from_sequence(self.sequences.interest);
            if !self.interests.contains_key(&id) {
                return id;
            }
        }
    }

    /// Builds a semantic node with a freshly allocated id. Not yet attached.
    pub fn new_semantic(
        &mut self,
        parent: &MemoryId,
        kind: SemanticKind,
        value: impl Into<String>,
        source: SemanticSource,
    ) -> SemanticNode {
        SemanticNode {
            id: self.next_semantic_id(),
            parent_memory: parent.clone(),
            kind,
            value: value.into(),
            source,
        }
    }

    pub fn add_memory(&mut self, memory: MemoryNode) -> Result<()> {
        if self.memories.contains_key(&memory.id) {
            return Err(GraphError::DuplicateMemory(memory.id));
        }
        if memory.user_id != self.user_id {
            return Err(GraphError::UserMismatch {
                expected: self.user_id.clone(),
                found: memory.user_id,
            });
        }
        if let Some(reason) = memory.shape_error() {
            return Err(GraphError::InvalidMemory(reason));
        }
        if let Some(n) = memory.id.sequence() {
            self.sequences.memory = self.sequences.memory.max(n);
        }
        self.memories.insert(memory.id.clone(), memory);
        Ok(())
    }

    /// Appends turns to a memory's conversation. All-or-nothing.
    pub fn append_conversation(&mut self, memory: &MemoryId, turns: Vec<ConversationTurn>) -> Result<()> {
        let node = self
            .memories
            .get(memory)
            .ok_or_else(|| GraphError::UnknownMemory(memory.clone()))?;
        let mut extended = node.clone();
        extended.conversation.extend(turns);
        if let Some(reason) = extended.shape_error() {
            return Err(GraphError::InvalidMemory(reason));
        }
        self.memories.insert(memory.clone(), extended);
        Ok(())
    }

    /// Attaches semantic nodes to a memory. All-or-nothing.
    pub fn attach_semantics(&mut self, memory: &MemoryId, nodes: Vec<SemanticNode>) -> Result<()> {
        if !self.memories.contains_key(memory) {
            return Err(GraphError::UnknownMemory(memory.clone()));
        }
        let mut has_summary = self.summary_of(memory).is_some();
        let mut batch_ids = BTreeSet::new();
        for node in &nodes {
            if &node.parent_memory != memory {
                return Err(GraphError::ParentMismatch {
                    semantic: node.id.clone(),
                    expected: memory.clone(),
                    found: node.parent_memory.clone(),
                });
            }
            if self.semantics.contains_key(&node.id) || !batch_ids.insert(&node.id) {
                return Err(GraphError::DuplicateSemantic(node.id.clone()));
            }
            if node.value.trim().is_empty() {
                return Err(GraphError::EmptyValue(node.id.clone()));
            }
            if node.kind == SemanticKind::Summary {
                if has_summary {
                    return Err(GraphError::SummaryConflict(memory.clone()));
                }
                has_summary = true;
            }
        }
        let owned = self.semantics_by_memory.entry(memory.clone()).or_default();
        for node in nodes {
            if let Some(n) = node.id.sequence() {
                self.sequences.semantic = self.sequences.semantic.max(n);
            }
            owned.insert(node.id.clone());
            self.semantics.insert(node.id.clone(), node);
        }
        Ok(())
    }

    /// Connects a memory to the interest with this canonical label, creating
    /// the interest when it does not exist yet. Idempotent per (memory, label).
    pub fn link_interest(
        &mut self,
        memory: &MemoryId,
        label: &str,
        category: InterestCategory,
    ) -> Result<InterestId> {
        if !self.memories.contains_key(memory) {
            return Err(GraphError::UnknownMemory(memory.clone()));
        }
        let canonical = canonical_label(label);
        if canonical.is_empty() {
            return Err(GraphError::EmptyLabel(label.to_owned()));
        }
        let interest = match self.label_index.get(&canonical) {
            Some(id) => id.clone(),
            None => {
                let id = self.next_interest_id();
                self.interests.insert(
                    id.clone(),
                    InterestNode {
                        id: id.clone(),
                        label: canonical.clone(),
                        display_label: label.trim().to_owned(),
                        category,
                    },
                );
                self.label_index.insert(canonical, id.clone());
                id
            }
        };
        self.insert_edge(memory.clone(), interest.clone());
        Ok(interest)
    }

    fn insert_edge(&mut self, memory: MemoryId, interest: InterestId) {
        self.members
            .entry(interest.clone())
            .or_default()
            .insert(memory.clone());
        self.interests_by_memory
            .entry(memory.clone())
            .or_default()
            .insert(interest.clone());
        self.edges.insert((memory, interest));
    }

    fn remove_edge(&mut self, memory: &MemoryId, interest: &InterestId) {
        self.edges.remove(&(memory.clone(), interest.clone()));
        if let Some(set) = self.members.get_mut(interest) {
            set.remove(memory);
        }
        if let Some(set) = self.interests_by_memory.get_mut(memory) {
            set.remove(interest);
            if set.is_empty() {
                self.interests_by_memory.remove(memory);
            }
        }
    }

    /// Drops interests left without members. Returns the removed ids.
    fn prune_orphans(&mut self) -> Vec<InterestId> {
        let orphans: Vec<InterestId> = self
            .interests
            .keys()
            .filter(|id| self.members.get(*id).is_none_or(BTreeSet::is_empty))
            .cloned()
            .collect();
        for id in &orphans {
            if let Some(node) = self.interests.remove(id) {
                self.label_index.remove(&node.label);
            }
            self.members.remove(id);
        }
        orphans
    }

    /// Replaces a memory's interest edges with links to `labels`, reusing
    /// existing interests and pruning any left without members.
    pub fn replace_interests(
        &mut self,
        memory: &MemoryId,
        labels: &[(String, InterestCategory)],
    ) -> Result<BTreeSet<InterestId>> {
        if !self.memories.contains_key(memory) {
            return Err(GraphError::UnknownMemory(memory.clone()));
        }
        if let Some((label, _)) = labels.iter().find(|(l, _)| canonical_label(l).is_empty()) {
            return Err(GraphError::EmptyLabel(label.clone()));
        }
        let mut fresh = BTreeSet::new();
        for (label, category) in labels {
            fresh.insert(self.link_interest(memory, label, *category)?);
        }
        let stale: Vec<InterestId> = self
            .interests_of(memory)
            .into_iter()
            .filter(|id| !fresh.contains(id))
            .collect();
        for id in &stale {
            self.remove_edge(memory, id);
        }
        self.prune_orphans();
        Ok(fresh)
    }

    /// Removes a memory together with its semantic nodes and edges; interests
    /// left without members are pruned.
    pub fn delete_memory(&mut self, memory: &MemoryId) -> Result<MemoryNode> {
        let node = self
            .memories
            .remove(memory)
            .ok_or_else(|| GraphError::UnknownMemory(memory.clone()))?;
        for id in self.semantics_by_memory.remove(memory).unwrap_or_default() {
            self.semantics.remove(&id);
        }
        for interest in self.interests_of(memory) {
            self.remove_edge(memory, &interest);
        }
        self.prune_orphans();
        Ok(node)
    }

    /// Union of the memories adjacent to the given interests.
    pub fn memories_for_interests(
        &self,
        interests: &BTreeSet<InterestId>,
    ) -> Result<BTreeSet<MemoryId>> {
        let mut out = BTreeSet::new();
        for id in interests {
            let members = self
                .members
                .get(id)
                .filter(|_| self.interests.contains_key(id))
                .ok_or_else(|| GraphError::UnknownInterest(id.clone()))?;
            out.extend(members.iter().cloned());
        }
        Ok(out)
    }

    /// Semantic nodes per memory, each list ordered by (kind, id).
    pub fn semantics_of<'a, I>(&self, memories: I) -> Result<BTreeMap<MemoryId, Vec<SemanticNode>>>
    where
        I: IntoIterator<Item = &'a MemoryId>,
    {
        let mut out = BTreeMap::new();
        for memory in memories {
            if !self.memories.contains_key(memory) {
                return Err(GraphError::UnknownMemory(memory.clone()));
            }
            let mut nodes: Vec<SemanticNode> = self
                .semantics_by_memory
                .get(memory)
                .into_iter()
                .flatten()
                .filter_map(|id| self.semantics.get(id).cloned())
                .collect();
            nodes.sort_by(|a, b| (a.kind, &a.id).cmp(&(b.kind, &b.id)));
            out.insert(memory.clone(), nodes);
        }
        Ok(out)
    }

    /// Every violated invariant; empty for a healthy graph. Never mutates.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.to_document().validate();
        // Keyed storage can hide an id that disagrees with its key.
        for (key, memory) in &self.memories {
            if key != &memory.id {
                out.push(Violation::DuplicateMemoryId {
                    memory: memory.id.clone(),
                });
            }
        }
        out
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            version: GRAPH_DOCUMENT_VERSION,
            user_id: self.user_id.clone(),
            memories: self.memories.values().cloned().collect(),
            semantics: self.semantics.values().cloned().collect(),
            interests: self.interests.values().cloned().collect(),
            memory_interest_edges: self.edges.iter().cloned().collect(),
        }
    }

    /// Builds a graph from a document, rejecting any invariant violation.
    pub fn from_document(doc: GraphDocument) -> Result<Self> {
        let violations = doc.validate();
        if !violations.is_empty() {
            return Err(GraphError::InvalidDocument(violations));
        }
        let mut graph = Self::new(doc.user_id);
        for memory in doc.memories {
            graph.add_memory(memory)?;
        }
        let mut grouped: BTreeMap<MemoryId, Vec<SemanticNode>> = BTreeMap::new();
        for semantic in doc.semantics {
            grouped
                .entry(semantic.parent_memory.clone())
                .or_default()
                .push(semantic);
        }
        for (memory, nodes) in grouped {
            graph.attach_semantics(&memory, nodes)?;
        }
        for interest in doc.interests {
            if let Some(n) = interest.id.sequence() {
                graph.sequences.interest = graph.sequences.interest.max(n);
            }
            graph
                .label_index
                .insert(interest.label.clone(), interest.id.clone());
            graph.interests.insert(interest.id.clone(), interest);
        }
        for (memory, interest) in doc.memory_interest_edges {
            graph.insert_edge(memory, interest);
        }
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(raw)?;
        Self::from_document(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(minute: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 12, minute, 0).unwrap()
    }

    fn memory(graph: &mut RelationalMemoryGraph, minute: u32) -> MemoryNode {
        MemoryNode {
            id: graph.next_memory_id(),
            created_at: ts(minute),
            media_refs: vec![],
            conversation: vec![ConversationTurn::user("We went out.", ts(minute))],
            user_id: graph.user_id().to_owned(),
        }
    }

    fn graph_with(n: u32) -> (RelationalMemoryGraph, Vec<MemoryId>) {
        let mut graph = RelationalMemoryGraph::new("alice");
        let ids = (0..n)
            .map(|i| {
                let m = memory(&mut graph, i);
                let id = m.id.clone();
                graph.add_memory(m).unwrap();
                id
            })
            .collect();
        (graph, ids)
    }

    #[test]
    fn add_memory_grows_graph() {
        let (mut graph, ids) = graph_with(1);
        assert_eq!(
            (graph.memory_count(), graph.semantic_count(), graph.interest_count()),
            (1, 0, 0)
        );
        graph.link_interest(&ids[0], "hiking", InterestCategory::Activity).unwrap();
        let before: Vec<_> = graph.edges().cloned().collect();
        let m2 = memory(&mut graph, 5);
        graph.add_memory(m2).unwrap();
        assert_eq!(graph.memory_count(), 2);
        assert_eq!(graph.edges().cloned().collect::<Vec<_>>(), before);
    }

    #[test]
    fn duplicate_memory_is_rejected() {
        let (mut graph, ids) = graph_with(1);
        let dup = graph.memory(&ids[0]).unwrap().clone();
        match graph.add_memory(dup) {
            Err(GraphError::DuplicateMemory(id)) => assert_eq!(id, ids[0]),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn memory_with_blank_turn_is_rejected() {
        let mut graph = RelationalMemoryGraph::new("alice");
        let mut m = memory(&mut graph, 0);
        m.conversation.push(ConversationTurn::assistant("   ", ts(1)));
        assert!(matches!(graph.add_memory(m), Err(GraphError::InvalidMemory(_))));
        let mut empty = memory(&mut graph, 0);
        empty.conversation.clear();
        assert!(matches!(graph.add_memory(empty), Err(GraphError::InvalidMemory(_))));
    }

    #[test]
    fn attach_semantics_counts_and_conflicts() {
        let (mut graph, ids) = graph_with(2);
        let m1 = &ids[0];
        let nodes = vec![
            graph.new_semantic(m1, SemanticKind::Participant, "David", SemanticSource::Conversation),
            graph.new_semantic(m1, SemanticKind::Location, "Yosemite", SemanticSource::Conversation),
            graph.new_semantic(m1, SemanticKind::Sentiment, "joyful", SemanticSource::Conversation),
            graph.new_semantic(m1, SemanticKind::Summary, "A hike.", SemanticSource::GeneratedSummary),
        ];
        graph.attach_semantics(m1, nodes).unwrap();
        assert_eq!(graph.semantics_of([m1]).unwrap()[m1].len(), 4);

        let second =
            graph.new_semantic(m1, SemanticKind::Summary, "Again", SemanticSource::GeneratedSummary);
        assert!(matches!(
            graph.attach_semantics(m1, vec![second]),
            Err(GraphError::SummaryConflict(_))
        ));

        let foreign =
            graph.new_semantic(&ids[1], SemanticKind::Object, "cake", SemanticSource::MediaAnalysis);
        assert!(matches!(
            graph.attach_semantics(m1, vec![foreign]),
            Err(GraphError::ParentMismatch { .. })
        ));

        let blank = graph.new_semantic(m1, SemanticKind::Object, "  ", SemanticSource::MediaAnalysis);
        assert!(matches!(
            graph.attach_semantics(m1, vec![blank]),
            Err(GraphError::EmptyValue(_))
        ));
        assert_eq!(graph.semantic_count(), 4);
        assert!(matches!(
            graph.attach_semantics(&MemoryId::from("mem-999999"), vec![]),
            Err(GraphError::UnknownMemory(_))
        ));
    }

    #[test]
    fn two_summaries_in_one_batch_conflict() {
        let (mut graph, ids) = graph_with(1);
        let m1 = &ids[0];
        let a = graph.new_semantic(m1, SemanticKind::Summary, "a", SemanticSource::GeneratedSummary);
        let b = graph.new_semantic(m1, SemanticKind::Summary, "b", SemanticSource::GeneratedSummary);
        assert!(graph.attach_semantics(m1, vec![a, b]).is_err());
        assert_eq!(graph.semantic_count(), 0);
    }

    #[test]
    fn canonical_labels() {
        assert_eq!(canonical_label("  Hiking! "), "hiking");
        assert_eq!(canonical_label("New   York\tCity"), "new york city");
        assert_eq!(canonical_label("\"Ça va?\""), "ça va");
        assert_eq!(canonical_label("ÉTÉ"), "été");
        assert_eq!(canonical_label("?!  "), "");
        assert_eq!(canonical_label("rock-climbing"), "rock-climbing");
    }

    #[test]
    fn link_interest_dedups_and_is_idempotent() {
        let (mut graph, ids) = graph_with(2);
        let a = graph.link_interest(&ids[0], "Hiking", InterestCategory::Activity).unwrap();
        let b = graph.link_interest(&ids[1], "hiking", InterestCategory::Hobby).unwrap();
        assert_eq!(a, b);
        assert_eq!(graph.interest_count(), 1);
        assert_eq!(graph.members_of(&a).unwrap().len(), 2);
        let node = graph.interest(&a).unwrap();
        assert_eq!(node.display_label, "Hiking");
        assert_eq!(node.category, InterestCategory::Activity);

        let edges = graph.interest_edge_count();
        graph.link_interest(&ids[0], "hiking", InterestCategory::Activity).unwrap();
        assert_eq!(graph.interest_edge_count(), edges);

        assert!(matches!(
            graph.link_interest(&MemoryId::from("mem-000009"), "hiking", InterestCategory::Activity),
            Err(GraphError::UnknownMemory(_))
        ));
        assert!(matches!(
            graph.link_interest(&ids[0], " ...", InterestCategory::Other),
            Err(GraphError::EmptyLabel(_))
        ));
    }

    #[test]
    fn traversal_unions_members() {
        let (mut graph, ids) = graph_with(3);
        let travel = graph.link_interest(&ids[0], "travel", InterestCategory::Activity).unwrap();
        graph.link_interest(&ids[1], "travel", InterestCategory::Activity).unwrap();
        let family = graph.link_interest(&ids[1], "family", InterestCategory::Person).unwrap();
        graph.link_interest(&ids[2], "family", InterestCategory::Person).unwrap();

        assert!(graph.memories_for_interests(&BTreeSet::new()).unwrap().is_empty());
        let both: BTreeSet<_> = [travel, family].into_iter().collect();
        let got = graph.memories_for_interests(&both).unwrap();
        assert_eq!(got, ids.iter().cloned().collect());
        let unknown: BTreeSet<_> = [InterestId::from("int-424242")].into_iter().collect();
        assert!(matches!(
            graph.memories_for_interests(&unknown),
            Err(GraphError::UnknownInterest(_))
        ));
    }

    #[test]
    fn semantics_of_orders_by_kind_then_id() {
        let (mut graph, ids) = graph_with(2);
        let m1 = &ids[0];
        let nodes = vec![
            graph.new_semantic(m1, SemanticKind::Summary, "s", SemanticSource::GeneratedSummary),
            graph.new_semantic(m1, SemanticKind::Object, "cake", SemanticSource::MediaAnalysis),
            graph.new_semantic(m1, SemanticKind::Participant, "Ann", SemanticSource::Conversation),
        ];
        graph.attach_semantics(m1, nodes).unwrap();
        let map = graph.semantics_of([m1]).unwrap();
        let kinds: Vec<_> = map[m1].iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![SemanticKind::Participant, SemanticKind::Object, SemanticKind::Summary]
        );
        let empty = graph.semantics_of([&ids[1]]).unwrap();
        assert!(empty[&ids[1]].is_empty());
        assert!(graph.semantics_of([&MemoryId::from("mem-777777")]).is_err());
    }

    #[test]
    fn delete_cascades_and_prunes() {
        let (mut graph, ids) = graph_with(2);
        let s = graph.new_semantic(&ids[0], SemanticKind::Object, "kite", SemanticSource::MediaAnalysis);
        graph.attach_semantics(&ids[0], vec![s]).unwrap();
        let solo = graph.link_interest(&ids[0], "kites", InterestCategory::Hobby).unwrap();
        let shared = graph.link_interest(&ids[0], "beach", InterestCategory::Location).unwrap();
        graph.link_interest(&ids[1], "beach", InterestCategory::Location).unwrap();

        graph.delete_memory(&ids[0]).unwrap();
        assert_eq!(graph.semantic_count(), 0);
        assert!(graph.interest(&solo).is_none());
        assert!(graph.interest_by_label("kites").is_none());
        assert_eq!(graph.members_of(&shared).unwrap().len(), 1);
        assert!(graph.validate().is_empty());
    }

    #[test]
    fn replace_interests_keeps_reused_ids() {
        let (mut graph, ids) = graph_with(2);
        let hiking = graph.link_interest(&ids[0], "hiking", InterestCategory::Activity).unwrap();
        let solo = graph.link_interest(&ids[0], "kites", InterestCategory::Hobby).unwrap();
        graph.link_interest(&ids[1], "beach", InterestCategory::Location).unwrap();
        let before = graph.clone();

        graph
            .replace_interests(
                &ids[0],
                &[
                    ("hiking".into(), InterestCategory::Activity),
                    ("kites".into(), InterestCategory::Hobby),
                ],
            )
            .unwrap();
        assert_eq!(graph, before);

        graph
            .replace_interests(&ids[0], &[("hiking".into(), InterestCategory::Activity)])
            .unwrap();
        assert!(graph.interest(&solo).is_none());
        assert!(graph.interest(&hiking).is_some());
        assert!(graph.interest_by_label("beach").is_some());
    }

    #[test]
    fn healthy_graph_validates() {
        let (mut graph, ids) = graph_with(2);
        graph.link_interest(&ids[0], "hiking", InterestCategory::Activity).unwrap();
        assert!(graph.validate().is_empty());
    }

    #[test]
    fn corrupted_edge_is_reported() {
        let (mut graph, ids) = graph_with(1);
        graph.link_interest(&ids[0], "hiking", InterestCategory::Activity).unwrap();
        graph
            .edges
            .insert((ids[0].clone(), InterestId::from("int-000404")));
        let violations = graph.validate();
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert!(matches!(violations[0], Violation::DanglingEdge { .. }));
    }

    #[test]
    fn duplicate_labels_in_document_are_rejected() {
        let (mut graph, ids) = graph_with(2);
        graph.link_interest(&ids[0], "hiking", InterestCategory::Activity).unwrap();
        let mut doc = graph.to_document();
        doc.interests.push(InterestNode {
            id: InterestId::from("int-000099"),
            label: "hiking".into(),
            display_label: "Hiking".into(),
            category: InterestCategory::Hobby,
        });
        doc.memory_interest_edges
            .push((ids[1].clone(), InterestId::from("int-000099")));
        let raw = serde_json::to_string(&doc).unwrap();
        match RelationalMemoryGraph::from_json(&raw) {
            Err(GraphError::InvalidDocument(v)) => {
                assert_eq!(v.len(), 1, "{v:?}");
                assert!(matches!(v[0], Violation::DuplicateInterestLabel { .. }));
            }
            other => panic!("expected invalid document, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        let graph = RelationalMemoryGraph::new("bob");
        let mut value: serde_json::Value = serde_json::from_str(&graph.to_json()).unwrap();
        value["extra"] = serde_json::json!(1);
        assert!(matches!(
            RelationalMemoryGraph::from_json(&value.to_string()),
            Err(GraphError::Json(_))
        ));
        let mut doc = graph.to_document();
        doc.version = 2;
        assert!(matches!(
            RelationalMemoryGraph::from_document(doc),
            Err(GraphError::InvalidDocument(_))
        ));
    }

    #[test]
    fn json_round_trip_keeps_id_sequences() {
        let (mut graph, ids) = graph_with(3);
        let s = graph.new_semantic(&ids[2], SemanticKind::Summary, "x", SemanticSource::GeneratedSummary);
        graph.attach_semantics(&ids[2], vec![s]).unwrap();
        graph.link_interest(&ids[1], "lake", InterestCategory::Location).unwrap();
        let raw = graph.to_json();
        assert!(raw.contains("\"2024-06-01T12:02:00Z\""));
        let mut back = RelationalMemoryGraph::from_json(&raw).unwrap();
        assert_eq!(back, graph);
        assert_eq!(back.to_json(), raw);
        assert_eq!(back.next_memory_id(), MemoryId::from("mem-000004"));
    }
}
