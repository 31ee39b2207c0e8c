//! Precision/recall/F1 scoring, the strategy benchmark and failure tags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::graph::{MemoryId, RelationalMemoryGraph};
use crate::llm::LlmProvider;
use crate::rag::{RagConfig, RagError, RagPipeline, Variant, VectorIndex};
use crate::retrieval::{Exchange, RetrievalError, RetrievalOutcome, RetrievalQuery, Retriever, SessionId, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn from_counts(hits: usize, retrieved: usize, relevant: usize) -> Scores {
    let precision = if retrieved == 0 { 0.0 } else { hits as f64 / retrieved as f64 };
    let recall = match (relevant, retrieved) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => hits as f64 / relevant as f64,
    };
    Scores {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn precision_recall_f1<T: Ord>(retrieved: &BTreeSet<T>, relevant: &BTreeSet<T>) -> Scores {
    let hits = retrieved.intersection(relevant).count();
    from_counts(hits, retrieved.len(), relevant.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    Graph,
    Rag(Variant),
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Graph,
        Strategy::Rag(Variant::V1),
        Strategy::Rag(Variant::V2),
        Strategy::Rag(Variant::V3),
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Graph => f.write_str("graph"),
            Strategy::Rag(v) => write!(f, "rag-{v}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graph" => Ok(Strategy::Graph),
            other => other
                .strip_prefix("rag-")
                .and_then(|v| v.parse().ok())
                .map(Strategy::Rag)
                .ok_or_else(|| format!("unknown strategy {other:?}")),
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureTag {
    /// Relevant memories beyond the top-k cut.
    I1,
    /// Missed memories that a larger k would not explain.
    I2,
    /// One memory enumerated as several items.
    I3,
    /// Citation outside the graph or the retrieved set.
    I4,
}

/// What the classifier needs to know about the producing strategy.
#[derive(Debug, Clone, Copy)]
pub struct StrategyContext {
    pub strategy: Strategy,
    /// `None` for the uncapped graph traversal.
    pub top_k: Option<usize>,
}

pub fn classify_failures(
    outcome: &RetrievalOutcome,
    gold: &BTreeSet<MemoryId>,
    context: &StrategyContext,
    graph: &RelationalMemoryGraph,
) -> BTreeSet<FailureTag> {
    let retrieved: BTreeSet<MemoryId> = outcome.retrieved_memories.iter().cloned().collect();
    let recall = precision_recall_f1(&retrieved, gold).recall;
    let mut tags = BTreeSet::new();
    let over_k = context.top_k.is_some_and(|k| gold.len() > k);
    if recall < 1.0 {
        if over_k && matches!(context.strategy, Strategy::Rag(_)) {
            tags.insert(FailureTag::I1);
        }
        if !over_k {
            tags.insert(FailureTag::I2);
        }
    }
    let mut enumerated: BTreeMap<&MemoryId, usize> = BTreeMap::new();
    for item in &outcome.response_items {
        for id in item.memory_ids.iter().collect::<BTreeSet<_>>() {
            *enumerated.entry(id).or_default() += 1;
        }
    }
    if enumerated.values().any(|n| *n >= 2) {
        tags.insert(FailureTag::I3);
    }
    let fabricated = outcome
        .cited_memory_ids
        .iter()
        .chain(enumerated.keys().copied())
        .any(|id| graph.memory(id).is_none() || !retrieved.contains(id));
    if fabricated {
        tags.insert(FailureTag::I4);
    }
    tags
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCase {
    pub case_id: String,
    pub user_id: String,
    pub query: String,
    pub gold_relevant: BTreeSet<MemoryId>,
    #[serde(default)]
    pub followups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub version: u32,
    pub cases: Vec<EvalCase>,
}

impl EvalFile {
    pub fn from_json(raw: &str) -> Result<Self, EvalError> {
        let file: EvalFile = serde_json::from_str(raw).map_err(|e| EvalError::Format(e.to_string()))?;
        if file.version != 1 {
            return Err(EvalError::Format(format!("unsupported eval file version {}", file.version)));
        }
        Ok(file)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("eval file: {0}")]
    Format(String),
    #[error("case {case} names user {user}, who has no graph")]
    UnknownUser { case: String, user: String },
    #[error("case {case} lists gold memory {memory}, which is not in the graph")]
    UnknownGold { case: String, memory: MemoryId },
    #[error("case id {0} appears twice")]
    DuplicateCase(String),
    #[error("case {case}: {source}")]
    Retrieval {
        case: String,
        #[source]
        source: RetrievalError,
    },
    #[error("case {case}: {source}")]
    Rag {
        case: String,
        #[source]
        source: RagError,
    },
    #[error(transparent)]
    Index(#[from] RagError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub user_id: String,
    pub strategy: Strategy,
    pub retrieved: Vec<MemoryId>,
    pub gold: BTreeSet<MemoryId>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tags: BTreeSet<FailureTag>,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub cases: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tag_counts: BTreeMap<FailureTag, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: String,
    pub scoring: String,
    pub rag: RagConfig,
    pub strategies: Vec<StrategySummary>,
    pub cases: Vec<CaseResult>,
}

/// cases, hits, retrieved, gold, tag counts
type Pool = (usize, usize, usize, usize, BTreeMap<FailureTag, usize>);

impl MetricsReport {
    fn assemble(rag: RagConfig, mut cases: Vec<CaseResult>) -> Self {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id).then(a.strategy.cmp(&b.strategy)));
        let mut pooled: BTreeMap<Strategy, Pool> = BTreeMap::new();
        for c in &cases {
            let retrieved: BTreeSet<&MemoryId> = c.retrieved.iter().collect();
            let hits = c.gold.iter().filter(|id| retrieved.contains(id)).count();
            let entry = pooled.entry(c.strategy).or_default();
            entry.0 += 1;
            entry.1 += hits;
            entry.2 += retrieved.len();
            entry.3 += c.gold.len();
            for tag in &c.tags {
                *entry.4.entry(*tag).or_default() += 1;
            }
        }
        let strategies = pooled
            .into_iter()
            .map(|(strategy, (n, hits, retrieved, relevant, tag_counts))| {
                let s = from_counts(hits, retrieved, relevant);
                StrategySummary {
                    strategy,
                    cases: n,
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                    tag_counts,
                }
            })
            .collect();
        Self {
            averaging: "micro".into(),
            scoring: "final_turn".into(),
            rag,
            strategies,
            cases,
        }
    }

    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn case(&self, case_id: &str, strategy: Strategy) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.case_id == case_id && c.strategy == strategy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let tags = |t: &BTreeSet<FailureTag>| {
            if t.is_empty() {
                "-".to_owned()
            } else {
                t.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(",")
            }
        };
        let mut out = format!(
            "micro-averaged over cases, final turn scored; k={} l={} overlap={} D={}\n\n",
            self.rag.top_k, self.rag.chunk_length, self.rag.overlap, self.rag.dimension
        );
        out.push_str(&format!(
            "{:<10} {:>6} {:>10} {:>10} {:>10}\n",
            "strategy", "cases", "precision", "recall", "f1"
        ));
        for s in &self.strategies {
            out.push_str(&format!(
                "{:<10} {:>6} {:>10.4} {:>10.4} {:>10.4}\n",
                s.strategy.to_string(),
                s.cases,
                s.precision,
                s.recall,
                s.f1
            ));
        }
        if !self.cases.is_empty() {
            out.push_str(&format!(
                "\n{:<12} {:<10} {:>9} {:>6} {:>10} {:>10} {:>10}  {}\n",
                "case", "strategy", "retrieved", "gold", "precision", "recall", "f1", "tags"
            ));
            for c in &self.cases {
                out.push_str(&format!(
                    "{:<12} {:<10} {:>9} {:>6} {:>10.4} {:>10.4} {:>10.4}  {}\n",
                    c.case_id,
                    c.strategy.to_string(),
                    c.retrieved.len(),
                    c.gold.len(),
                    c.precision,
                    c.recall,
                    c.f1,
                    tags(&c.tags)
                ));
            }
        }
        out
    }
}

/// Runs every strategy over every case; indices are built once per user.
pub struct Benchmark {
    llm: Arc<dyn LlmProvider>,
    rag: RagConfig,
    strategies: Vec<Strategy>,
}

impl Benchmark {
    pub fn new(llm: Arc<dyn LlmProvider>, rag: RagConfig) -> Self {
        Self {
            llm,
            rag,
            strategies: Strategy::ALL.to_vec(),
        }
    }

    pub fn with_strategies(mut self, strategies: &[Strategy]) -> Self {
        self.strategies = strategies.to_vec();
        self
    }

    pub fn run(
        &self,
        graphs: &BTreeMap<String, RelationalMemoryGraph>,
        cases: &[EvalCase],
    ) -> Result<MetricsReport, EvalError> {
        let mut seen = BTreeSet::new();
        for case in cases {
            if !seen.insert(case.case_id.as_str()) {
                return Err(EvalError::DuplicateCase(case.case_id.clone()));
            }
            let graph = graphs.get(&case.user_id).ok_or_else(|| EvalError::UnknownUser {
                case: case.case_id.clone(),
                user: case.user_id.clone(),
            })?;
            if let Some(missing) = case.gold_relevant.iter().find(|id| graph.memory(id).is_none()) {
                return Err(EvalError::UnknownGold {
                    case: case.case_id.clone(),
                    memory: missing.clone(),
                });
            }
        }

        let retriever = Retriever::new(self.llm.clone());
        let mut pipelines: BTreeMap<Variant, RagPipeline> = BTreeMap::new();
        let mut indices: BTreeMap<(String, Variant), VectorIndex> = BTreeMap::new();
        let mut results = Vec::new();
        for &strategy in &self.strategies {
            if let Strategy::Rag(variant) = strategy {
                let config = RagConfig { variant, ..self.rag };
                pipelines.insert(variant, RagPipeline::new(config, self.llm.clone())?);
            }
        }
        for case in cases {
            let graph = &graphs[&case.user_id];
            for &strategy in &self.strategies {
                let (outcome, top_k) = match strategy {
                    Strategy::Graph => (self.run_graph(&retriever, graph, case)?, None),
                    Strategy::Rag(variant) => {
                        let pipeline = &pipelines[&variant];
                        let key = (case.user_id.clone(), variant);
                        if !indices.contains_key(&key) {
                            indices.insert(key.clone(), pipeline.build_index(graph)?);
                        }
                        let outcome = run_rag(pipeline, graph, &indices[&key], case)?;
                        (outcome, Some(pipeline.config().top_k))
                    }
                };
                let retrieved: BTreeSet<MemoryId> = outcome.retrieved_memories.iter().cloned().collect();
                let scores = precision_recall_f1(&retrieved, &case.gold_relevant);
                let tags = classify_failures(&outcome, &case.gold_relevant, &StrategyContext { strategy, top_k }, graph);
                results.push(CaseResult {
                    case_id: case.case_id.clone(),
                    user_id: case.user_id.clone(),
                    strategy,
                    retrieved: outcome.retrieved_memories,
                    gold: case.gold_relevant.clone(),
                    precision: scores.precision,
                    recall: scores.recall,
                    f1: scores.f1,
                    tags,
                    turns: 1 + case.followups.len(),
                });
            }
        }
        Ok(MetricsReport::assemble(self.rag, results))
    }

    fn run_graph(
        &self,
        retriever: &Retriever,
        graph: &RelationalMemoryGraph,
        case: &EvalCase,
    ) -> Result<RetrievalOutcome, EvalError> {
        let mut session = SessionState::new(SessionId::new(format!("bench-{}", case.case_id)), DateTime::UNIX_EPOCH);
        let wrap = |source| EvalError::Retrieval {
            case: case.case_id.clone(),
            source,
        };
        let mut outcome = retriever.refine(graph, &mut session, &case.query).map_err(wrap)?;
        for followup in &case.followups {
            outcome = retriever.refine(graph, &mut session, followup).map_err(wrap)?;
        }
        Ok(outcome)
    }
}

fn run_rag(
    pipeline: &RagPipeline,
    graph: &RelationalMemoryGraph,
    index: &VectorIndex,
    case: &EvalCase,
) -> Result<RetrievalOutcome, EvalError> {
    let wrap = |source| EvalError::Rag {
        case: case.case_id.clone(),
        source,
    };
    let mut history: Vec<Exchange> = Vec::new();
    let mut text = case.query.clone();
    let mut followups = case.followups.iter();
    loop {
        let query = RetrievalQuery {
            session_id: None,
            text: text.clone(),
            history: history.clone(),
        };
        let outcome = pipeline.answer(graph, index, &query).map_err(wrap)?;
        match followups.next() {
            Some(next) => {
                history.push(Exchange {
                    query: text,
                    response: outcome.response_text,
                });
                text = next.clone();
            }
            None => return Ok(outcome),
        }
    }
}
