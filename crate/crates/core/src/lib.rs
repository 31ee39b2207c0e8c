//! Relational memory graph engine.
//!
//! Memories (a capture conversation plus media metadata) are turned into a
//! per-user graph of memory, semantic and interest nodes by an LLM provider.
//! Retrieval selects relevant interests, traverses to every connected memory
//! and answers from those memories only, asking for clarification when the
//! request is ambiguous. Three vector-search baselines and an evaluation
//! harness sit alongside for comparison.
//!
//! Every LLM step goes through [`llm::LlmProvider`]; [`mock::MockProvider`]
//! is a deterministic rule-based provider that makes the whole pipeline
//! testable offline.

pub mod capture;
pub mod corpus;
pub mod eval;
pub mod extraction;
pub mod fixtures;
pub mod graph;
pub mod lexicon;
pub mod llm;
pub mod mock;
pub mod rag;
pub mod retrieval;
pub mod text;

pub use extraction::{Extractor, MediaMetadata, MemoryCapture};
pub use graph::{
    ConversationTurn, InterestCategory, InterestId, MemoryId, RelationalMemoryGraph, Role,
    SemanticKind, SemanticSource,
};
pub use llm::LlmProvider;
pub use mock::MockProvider;
