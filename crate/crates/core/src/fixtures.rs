//! Shipped synthetic fixtures: five users with four retrieval cases each,
//! plus two small corpora that isolate the top-k cap and fragmentation.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};

use crate::corpus::{Corpus, UserCorpus};
use crate::eval::{EvalCase, EvalFile};
use crate::extraction::{Extractor, MemoryCapture};
use crate::graph::{ConversationTurn, MemoryId, RelationalMemoryGraph};
use crate::mock::MockProvider;

pub const CORPUS_JSON: &str = include_str!("../fixtures/corpus.json");
pub const EVAL_JSON: &str = include_str!("../fixtures/eval.json");

pub fn corpus() -> Corpus {
    Corpus::from_json(CORPUS_JSON).expect("shipped corpus parses")
}

pub fn eval_cases() -> Vec<EvalCase> {
    EvalFile::from_json(EVAL_JSON).expect("shipped eval file parses").cases
}

/// The shipped corpus ingested with the default mock.
pub fn graphs() -> BTreeMap<String, RelationalMemoryGraph> {
    let extractor = Extractor::new(Arc::new(MockProvider::new()));
    corpus().ingest_all(&extractor).expect("shipped corpus ingests")
}

fn capture(at: DateTime<Utc>, text: &str) -> MemoryCapture {
    MemoryCapture {
        created_at: at,
        conversation: vec![
            ConversationTurn::assistant("Tell me about this moment. What was happening?", at),
            ConversationTurn::user(text, at + Duration::minutes(1)),
        ],
        media: Vec::new(),
    }
}

fn single_user(user_id: &str, texts: &[&str]) -> Corpus {
    let start = Utc.with_ymd_and_hms(2024, 3, 1, 10, 0, 0).unwrap();
    Corpus {
        version: 1,
        users: vec![UserCorpus {
            user_id: user_id.into(),
            memories: texts
                .iter()
                .enumerate()
                .map(|(i, t)| capture(start + Duration::days(i as i64 * 7), t))
                .collect(),
        }],
    }
}

/// Five travel memories among unrelated ones; memories 1 to 5 are the trips.
pub fn top_k_corpus() -> Corpus {
    single_user(
        "topk",
        &[
            "A trip to Paris with Maya, mostly cafes and bookshops.",
            "A vacation in Hawaii with Tom and a lot of snorkeling.",
            "Our trip to Tokyo, ramen every night.",
            "A trip to Rome with Lena and too much gelato.",
            "A winter trip to Iceland to see the northern lights.",
            "We went swimming at the lake after work.",
            "I went skiing and fell over constantly.",
            "A birthday dinner for Omar.",
        ],
    )
}

pub fn top_k_gold() -> Vec<MemoryId> {
    (1..=5).map(MemoryId::from_sequence).collect()
}

/// Text of the fragmentation fixture's long memory; its first 400
/// characters become the summary.
pub const LONG_MEMORY: &str = "A trip to Paris with Maya that started with a delayed train and a very \
long wait on the platform, then a tiny hotel room above a bakery that smelled of butter every morning, \
an afternoon wandering the museum halls until our feet hurt, a dinner cruise on the river where the \
boat broke down right under a bridge, a picnic in the gardens with cheese we could not pronounce, and \
a final night on a rooftop watching the tower sparkle while planning the next visit to the city again.";

/// Limit on mock summaries for the fragmentation fixture.
pub const LONG_SUMMARY_CHARS: usize = 400;

/// One 400-character summary followed by a short one.
pub fn fragmentation_corpus() -> Corpus {
    single_user(
        "frag",
        &[
            LONG_MEMORY,
            "We went swimming at the lake on a hot afternoon with Ann and a cooler full of watermelon.",
        ],
    )
}

pub fn ingest_with_mock(corpus: &Corpus, summary_max_chars: usize) -> BTreeMap<String, RelationalMemoryGraph> {
    let extractor = Extractor::new(Arc::new(MockProvider { summary_max_chars }));
    corpus.ingest_all(&extractor).expect("fixture corpus ingests")
}
