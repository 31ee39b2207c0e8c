//! The engine behind both the HTTP API and the CLI.
//!
//! Each user has a slot holding an `Arc` snapshot of their graph. Readers
//! clone the `Arc` and work lock-free against it; writers take the slot's
//! write mutex, mutate a private copy, persist it and only then swap it in.
//! A failed request therefore leaves both disk and memory untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use memgraph::capture::CaptureSession;
use memgraph::corpus::{ingest_into, Corpus, UserCorpus};
use memgraph::eval::{Benchmark, EvalCase, MetricsReport, Strategy};
use memgraph::graph::{GraphDocument, InterestCategory, InterestId, Violation};
use memgraph::lexicon::MOCK_RULES_VERSION;
use memgraph::llm::LlmProvider;
use memgraph::rag::{build_chunks, RagConfig, RagPipeline, Variant, VectorIndex};
use memgraph::retrieval::{
    Exchange, RetrievalOutcome, RetrievalQuery, Retriever, SessionId, SessionState, SessionStore,
};
use memgraph::{ConversationTurn, Extractor, MediaMetadata, MemoryCapture, MemoryId, RelationalMemoryGraph};
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::ApiError;
use crate::http_provider::build_provider;
use crate::store::{validate_user_id, FileStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub mock_rules_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterestView {
    pub id: InterestId,
    pub label: String,
    pub display_label: String,
    pub category: InterestCategory,
    pub memory_ids: Vec<MemoryId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub query: String,
    #[serde(default)]
    pub session_id: Option<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: SessionId,
    #[serde(flatten)]
    pub outcome: RetrievalOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagQueryRequest {
    pub query: String,
    #[serde(default)]
    pub history: Vec<Exchange>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRequest {
    /// Defaults to the shipped fixture corpus.
    #[serde(default)]
    pub corpus: Option<Corpus>,
    /// Defaults to the shipped fixture cases; required when `corpus` is given.
    #[serde(default)]
    pub cases: Option<Vec<EvalCase>>,
    #[serde(default)]
    pub rag: Option<RagConfig>,
    #[serde(default)]
    pub strategies: Option<Vec<Strategy>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendTurns {
    pub conversation: Vec<ConversationTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub user_id: String,
    pub variant: Variant,
    pub chunks: usize,
    pub memories: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureView {
    pub capture_id: String,
    pub user_id: String,
    pub pending_question: Option<String>,
    pub complete: bool,
    pub turns: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureStart {
    #[serde(default)]
    pub media: Vec<MediaMetadata>,
}

struct UserSlot {
    graph: RwLock<Arc<RelationalMemoryGraph>>,
    write: Mutex<()>,
    sessions: Mutex<SessionStore>,
    indices: Mutex<HashMap<Variant, Arc<VectorIndex>>>,
}

struct PendingCapture {
    user_id: String,
    session: CaptureSession,
}

pub struct Engine {
    config: EngineConfig,
    store: FileStore,
    provider: Arc<dyn LlmProvider>,
    extractor: Extractor,
    retriever: Retriever,
    users: Mutex<HashMap<String, Arc<UserSlot>>>,
    captures: Mutex<BTreeMap<String, PendingCapture>>,
    capture_seq: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, ApiError> {
        config.validate()?;
        let provider = build_provider(&config)?;
        Self::with_provider(config, provider)
    }

    /// An engine with an explicit provider; `config.provider` is ignored.
    pub fn with_provider(config: EngineConfig, provider: Arc<dyn LlmProvider>) -> Result<Self, ApiError> {
        config.validate()?;
        let store = FileStore::open(&config.data_dir)?;
        let retries = config.provider.retries;
        Ok(Self {
            extractor: Extractor::new(provider.clone()).with_retries(retries),
            retriever: Retriever::new(provider.clone()).with_retries(retries),
            provider,
            store,
            config,
            users: Mutex::new(HashMap::new()),
            captures: Mutex::new(BTreeMap::new()),
            capture_seq: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            mock_rules_version: MOCK_RULES_VERSION,
        }
    }

    fn slot(&self, user: &str) -> Result<Arc<UserSlot>, ApiError> {
        validate_user_id(user)?;
        let mut users = lock(&self.users);
        if let Some(slot) = users.get(user) {
            return Ok(slot.clone());
        }
        let graph = self
            .store
            .load_graph(user)?
            .unwrap_or_else(|| RelationalMemoryGraph::new(user));
        let slot = Arc::new(UserSlot {
            graph: RwLock::new(Arc::new(graph)),
            write: Mutex::new(()),
            sessions: Mutex::new(SessionStore::new(self.config.session_expiry())),
            indices: Mutex::new(HashMap::new()),
        });
        users.insert(user.to_owned(), slot.clone());
        Ok(slot)
    }

    /// A consistent snapshot of the user's graph (empty for new users).
    pub fn graph(&self, user: &str) -> Result<Arc<RelationalMemoryGraph>, ApiError> {
        let slot = self.slot(user)?;
        let snapshot = slot.graph.read().unwrap_or_else(|p| p.into_inner()).clone();
        Ok(snapshot)
    }

    pub fn graph_document(&self, user: &str) -> Result<GraphDocument, ApiError> {
        Ok(self.graph(user)?.to_document())
    }

    /// Applies `f` to a copy of the graph, persists the result, then
    /// publishes it. Per-user writes are serialized.
    fn mutate<T>(
        &self,
        user: &str,
        f: impl FnOnce(&mut RelationalMemoryGraph) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let slot = self.slot(user)?;
        let _guard = lock(&slot.write);
        let current = slot.graph.read().unwrap_or_else(|p| p.into_inner()).clone();
        let mut next = (*current).clone();
        let out = f(&mut next)?;
        if next != *current {
            self.store.save_graph(&next)?;
            *slot.graph.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(next);
            lock(&slot.indices).clear();
        }
        Ok(out)
    }

    pub fn ingest(&self, user: &str, capture: &MemoryCapture) -> Result<MemoryId, ApiError> {
        self.mutate(user, |g| Ok(self.extractor.ingest_memory(g, capture)?))
    }

    /// Ingests one corpus user memory by memory, persisting after each.
    pub fn ingest_corpus_user(&self, user: &UserCorpus) -> Result<Vec<MemoryId>, ApiError> {
        user.memories
            .iter()
            .enumerate()
            .map(|(i, capture)| {
                self.ingest(&user.user_id, capture).map_err(|mut e| {
                    e.message = format!("user {}, memory #{i}: {}", user.user_id, e.message);
                    e
                })
            })
            .collect()
    }

    /// Appends a later conversation to an existing memory.
    pub fn extend_memory(&self, user: &str, memory: &MemoryId, turns: &[ConversationTurn]) -> Result<(), ApiError> {
        self.mutate(user, |g| Ok(self.extractor.extend_memory(g, memory, turns)?))
    }

    pub fn delete_memory(&self, user: &str, memory: &MemoryId) -> Result<(), ApiError> {
        self.mutate(user, |g| g.delete_memory(memory).map(|_| ()).map_err(ApiError::from))
    }

    /// Re-runs interest extraction for every memory of the user in one
    /// atomic write.
    pub fn reextract(&self, user: &str) -> Result<usize, ApiError> {
        self.mutate(user, |g| {
            let ids: Vec<MemoryId> = g.memories().map(|m| m.id.clone()).collect();
            for id in &ids {
                self.extractor.reextract_interests(g, id)?;
            }
            Ok(ids.len())
        })
    }

    pub fn interests(&self, user: &str) -> Result<Vec<InterestView>, ApiError> {
        let graph = self.graph(user)?;
        Ok(graph
            .interests()
            .map(|i| InterestView {
                id: i.id.clone(),
                label: i.label.clone(),
                display_label: i.display_label.clone(),
                category: i.category,
                memory_ids: graph.members_of(&i.id).into_iter().flatten().cloned().collect(),
            })
            .collect())
    }

    pub fn validate_user(&self, user: &str) -> Result<Vec<Violation>, ApiError> {
        Ok(self.graph(user)?.validate())
    }

    pub fn chat(&self, user: &str, request: &ChatRequest) -> Result<ChatResponse, ApiError> {
        self.chat_at(user, request, Utc::now())
    }

    pub fn chat_at(&self, user: &str, request: &ChatRequest, now: DateTime<Utc>) -> Result<ChatResponse, ApiError> {
        if request.query.trim().is_empty() {
            return Err(ApiError::validation("query text is empty"));
        }
        let slot = self.slot(user)?;
        let graph = self.graph(user)?;
        let mut session: SessionState = {
            let mut sessions = lock(&slot.sessions);
            sessions.sweep(now);
            let id = match &request.session_id {
                Some(id) => id.clone(),
                None => sessions.open(now),
            };
            sessions.get_mut(&id, now)?.clone()
        };
        let outcome = self.retriever.refine(&graph, &mut session, &request.query)?;
        let session_id = session.session_id.clone();
        if let Ok(stored) = lock(&slot.sessions).get_mut(&session_id, now) {
            *stored = session;
        }
        Ok(ChatResponse { session_id, outcome })
    }

    pub fn close_session(&self, user: &str, session: &SessionId) -> Result<(), ApiError> {
        let slot = self.slot(user)?;
        let closed = lock(&slot.sessions).close(session);
        closed
            .map(|_| ())
            .ok_or_else(|| ApiError::not_found(format!("unknown session {session}")))
    }

    fn rag_config(&self, variant: Variant, k: Option<usize>) -> Result<RagConfig, ApiError> {
        let config = RagConfig {
            variant,
            top_k: k.unwrap_or(self.config.rag.top_k),
            ..self.config.rag
        };
        config.validate()?;
        Ok(config)
    }

    fn pipeline(&self, config: RagConfig) -> Result<RagPipeline, ApiError> {
        Ok(RagPipeline::new(config, self.provider.clone())?.with_retries(self.config.provider.retries))
    }

    /// The user's index for `variant`: cached, else loaded from disk when it
    /// still matches the graph, else rebuilt and persisted.
    fn index(
        &self,
        user: &str,
        graph: &RelationalMemoryGraph,
        pipeline: &RagPipeline,
    ) -> Result<Arc<VectorIndex>, ApiError> {
        let slot = self.slot(user)?;
        let variant = pipeline.config().variant;
        let chunks = build_chunks(graph, pipeline.config())?;
        let fresh = |index: &VectorIndex| {
            index.dimension() == pipeline.config().dimension
                && index.len() == chunks.len()
                && index.entries().iter().zip(&chunks).all(|(e, c)| {
                    e.chunk_id == c.id
                        && e.text == c.text
                        && e.source_memory_ids == c.source_memory_ids
                        && e.char_span == c.char_span
                })
        };
        if let Some(cached) = lock(&slot.indices).get(&variant) {
            if fresh(cached) {
                return Ok(cached.clone());
            }
        }
        let index = match self.store.load_index(user, variant) {
            Ok(Some(stored)) if fresh(&stored) => stored,
            _ => {
                let built = pipeline.build_index(graph)?;
                self.store.save_index(user, &built)?;
                built
            }
        };
        let index = Arc::new(index);
        lock(&slot.indices).insert(variant, index.clone());
        Ok(index)
    }

    pub fn build_index(&self, user: &str, variant: Variant) -> Result<IndexSummary, ApiError> {
        let graph = self.graph(user)?;
        let pipeline = self.pipeline(self.rag_config(variant, None)?)?;
        let index = self.index(user, &graph, &pipeline)?;
        Ok(IndexSummary {
            user_id: user.to_owned(),
            variant,
            chunks: index.len(),
            memories: graph.memory_count(),
            path: self.store.index_path(user, variant),
        })
    }

    pub fn rag_query(&self, user: &str, variant: Variant, request: &RagQueryRequest) -> Result<RetrievalOutcome, ApiError> {
        let graph = self.graph(user)?;
        let pipeline = self.pipeline(self.rag_config(variant, request.k)?)?;
        let index = self.index(user, &graph, &pipeline)?;
        let query = RetrievalQuery {
            session_id: None,
            text: request.query.clone(),
            history: request.history.clone(),
        };
        Ok(pipeline.answer(&graph, &index, &query)?)
    }

    /// Runs the benchmark on the shipped fixture or on a supplied corpus.
    /// Stored user graphs are never touched.
    pub fn bench(&self, request: &BenchRequest) -> Result<MetricsReport, ApiError> {
        let (corpus, cases) = match (&request.corpus, &request.cases) {
            (None, None) => (memgraph::fixtures::corpus(), memgraph::fixtures::eval_cases()),
            (Some(c), Some(cases)) => (c.clone(), cases.clone()),
            (None, Some(cases)) => (memgraph::fixtures::corpus(), cases.clone()),
            (Some(_), None) => return Err(ApiError::validation("a bench corpus needs its eval cases")),
        };
        let mut graphs = BTreeMap::new();
        for user in &corpus.users {
            if graphs.contains_key(&user.user_id) {
                return Err(ApiError::validation(format!("corpus lists user {} twice", user.user_id)));
            }
            let mut graph = RelationalMemoryGraph::new(user.user_id.clone());
            ingest_into(&self.extractor, &mut graph, user)?;
            graphs.insert(user.user_id.clone(), graph);
        }
        let rag = request.rag.unwrap_or(self.config.rag);
        rag.validate()?;
        let mut bench = Benchmark::new(self.provider.clone(), rag);
        if let Some(strategies) = &request.strategies {
            let unique: BTreeSet<&Strategy> = strategies.iter().collect();
            if strategies.is_empty() || unique.len() != strategies.len() {
                return Err(ApiError::validation("strategies must be a non-empty list without repeats"));
            }
            bench = bench.with_strategies(strategies);
        }
        Ok(bench.run(&graphs, &cases)?)
    }

    pub fn start_capture(&self, user: &str, start: CaptureStart) -> Result<CaptureView, ApiError> {
        validate_user_id(user)?;
        for (i, m) in start.media.iter().enumerate() {
            if m.media_ref.trim().is_empty() {
                return Err(ApiError::validation(format!("media item {i} has an empty media_ref")));
            }
        }
        let n = self.capture_seq.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("capture-{n:06}");
        let session = CaptureSession::start(Utc::now(), start.media);
        let view = capture_view(&id, user, &session);
        lock(&self.captures).insert(
            id,
            PendingCapture {
                user_id: user.to_owned(),
                session,
            },
        );
        Ok(view)
    }

    fn with_capture<T>(
        &self,
        user: &str,
        id: &str,
        f: impl FnOnce(&mut CaptureSession) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let mut captures = lock(&self.captures);
        match captures.get_mut(id) {
            Some(p) if p.user_id == user => f(&mut p.session),
            _ => Err(ApiError::not_found(format!("unknown capture {id} for user {user}"))),
        }
    }

    pub fn answer_capture(&self, user: &str, id: &str, text: &str) -> Result<CaptureView, ApiError> {
        self.with_capture(user, id, |s| {
            s.answer(text, Utc::now()).map_err(|e| ApiError::validation(e.to_string()))?;
            Ok(capture_view(id, user, s))
        })
    }

    /// Turns the capture into a memory. The capture survives a failed ingest
    /// so the client can retry.
    pub fn finish_capture(&self, user: &str, id: &str) -> Result<MemoryId, ApiError> {
        let capture = self.with_capture(user, id, |s| {
            s.clone().finish().map_err(|e| ApiError::validation(e.to_string()))
        })?;
        let memory = self.ingest(user, &capture)?;
        lock(&self.captures).remove(id);
        Ok(memory)
    }

    pub fn abandon_capture(&self, user: &str, id: &str) -> Result<(), ApiError> {
        self.with_capture(user, id, |_| Ok(()))?;
        lock(&self.captures).remove(id);
        Ok(())
    }
}

fn capture_view(id: &str, user: &str, session: &CaptureSession) -> CaptureView {
    CaptureView {
        capture_id: id.to_owned(),
        user_id: user.to_owned(),
        pending_question: session.pending_question().map(str::to_owned),
        complete: session.is_complete(),
        turns: session.conversation().len(),
    }
}
