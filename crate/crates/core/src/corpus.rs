//! Multi-user capture corpora, the input format for `ingest` and `bench`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extraction::{ExtractionError, Extractor, MemoryCapture};
use crate::graph::{MemoryId, RelationalMemoryGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserCorpus {
    pub user_id: String,
    pub memories: Vec<MemoryCapture>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub version: u32,
    pub users: Vec<UserCorpus>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file: {0}")]
    Format(String),
    #[error("user {0} appears twice in the corpus")]
    DuplicateUser(String),
    #[error("user {user}, memory #{index}: {source}")]
    Ingest {
        user: String,
        index: usize,
        #[source]
        source: ExtractionError,
    },
}

impl Corpus {
    pub fn from_json(raw: &str) -> Result<Self, CorpusError> {
        let corpus: Corpus = serde_json::from_str(raw).map_err(|e| CorpusError::Format(e.to_string()))?;
        if corpus.version != 1 {
            return Err(CorpusError::Format(format!("unsupported corpus version {}", corpus.version)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for user in &corpus.users {
            if !seen.insert(user.user_id.as_str()) {
                return Err(CorpusError::DuplicateUser(user.user_id.clone()));
            }
        }
        Ok(corpus)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    /// Ingests each user's captures in file order into a fresh graph.
    pub fn ingest_all(&self, extractor: &Extractor) -> Result<BTreeMap<String, RelationalMemoryGraph>, CorpusError> {
        self.users
            .iter()
            .map(|user| {
                let mut graph = RelationalMemoryGraph::new(user.user_id.clone());
                ingest_into(extractor, &mut graph, user)?;
                Ok((user.user_id.clone(), graph))
            })
            .collect()
    }
}

/// Appends one user's captures to an existing graph.
pub fn ingest_into(
    extractor: &Extractor,
    graph: &mut RelationalMemoryGraph,
    user: &UserCorpus,
) -> Result<Vec<MemoryId>, CorpusError> {
    user.memories
        .iter()
        .enumerate()
        .map(|(index, capture)| {
            extractor
                .ingest_memory(graph, capture)
                .map_err(|source| CorpusError::Ingest {
                    user: user.user_id.clone(),
                    index,
                    source,
                })
        })
        .collect()
}
