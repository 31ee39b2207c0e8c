//! Deterministic rule-based stand-in for the LLM.
//!
//! The mock reads only the rendered prompt, so it exercises the same prompt
//! plumbing as a real provider. Rules (version [`MOCK_RULES_VERSION`]):
//!
//! * semantic-extraction: over user turns only, lexicon terms become
//!   activity/location/datetime/sentiment facts (canonical form); capitalized
//!   words outside the stop-list and outside any lexicon hit become
//!   participants; the summary is the first user turn cut to 200 characters.
//! * interest-extraction: activity facts become activity or hobby interests,
//!   location facts become location interests, holiday facts become date
//!   interests.
//! * relevance-filter: an interest is relevant iff its label, its plural, or
//!   a lexicon synonym occurs as a phrase in the query.
//! * response-generation: one item per context block, citing the block refs,
//!   text taken from the first line of the block.
//!
//! [`MOCK_RULES_VERSION`]: crate::lexicon::MOCK_RULES_VERSION

use std::collections::BTreeSet;

use serde_json::json;

use crate::graph::{canonical_label, InterestCategory, SemanticKind};
use crate::lexicon::{self, find_terms, label_forms};
use crate::llm::{prompt_section, LlmProvider, LlmRequest, ProviderError, Schema};
use crate::text::{contains_phrase, raw_tokens, tokens, truncate_chars};

pub const SUMMARY_MAX_CHARS: usize = 200;

#[derive(Debug, Clone)]
pub struct MockProvider {
    pub summary_max_chars: usize,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self {
            summary_max_chars: SUMMARY_MAX_CHARS,
        }
    }
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }
}

impl LlmProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        let prompt = request.prompt.as_str();
        let reply = match request.expected_schema {
            Schema::SemanticExtraction => self.semantic_extraction(prompt),
            Schema::InterestExtraction => interest_extraction(prompt),
            Schema::RelevanceFilter => relevance_filter(prompt),
            Schema::ResponseGeneration => response_generation(prompt),
        };
        Ok(reply.unwrap_or_else(|| "mock: prompt is missing a required section".to_owned()))
    }
}

fn user_lines<'a>(lines: &[&'a str]) -> Vec<&'a str> {
    lines
        .iter()
        .filter_map(|l| l.strip_prefix("user: "))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect()
}

/// Facts the mock extracts from one user utterance, in order of appearance.
pub fn facts_in(text: &str) -> Vec<(SemanticKind, String)> {
    let raw: Vec<&str> = raw_tokens(text).collect();
    let toks = tokens(text);
    let hits = find_terms(&toks);
    let mut consumed = vec![false; toks.len()];
    let mut found: Vec<(usize, SemanticKind, String)> = Vec::new();
    for hit in &hits {
        consumed[hit.start..hit.start + hit.len].fill(true);
        found.push((hit.start, hit.term.class.semantic_kind(), hit.term.canonical.to_owned()));
    }
    for (i, word) in raw.iter().enumerate() {
        if consumed[i] || word.chars().count() < 2 {
            continue;
        }
        let mut chars = word.chars();
        let capitalized = chars.next().is_some_and(char::is_uppercase);
        if capitalized
            && word.chars().all(char::is_alphabetic)
            && !lexicon::is_stop_word(&toks[i])
        {
            found.push((i, SemanticKind::Participant, (*word).to_owned()));
        }
    }
    found.sort_by_key(|(pos, _, _)| *pos);
    found.into_iter().map(|(_, k, v)| (k, v)).collect()
}

impl MockProvider {
    fn semantic_extraction(&self, prompt: &str) -> Option<String> {
        let conversation = prompt_section(prompt, "conversation")?;
        let users = user_lines(&conversation);
        let mut seen = BTreeSet::new();
        let mut facts = Vec::new();
        for line in &users {
            for (kind, value) in facts_in(line) {
                if seen.insert((kind, value.to_lowercase())) {
                    facts.push(json!({"kind": kind.as_str(), "value": value}));
                }
            }
        }
        let summary = users
            .first()
            .map(|first| truncate_chars(first, self.summary_max_chars).trim().to_owned())
            .unwrap_or_default();
        Some(json!({"semantics": facts, "summary": summary}).to_string())
    }
}

fn interest_extraction(prompt: &str) -> Option<String> {
    let semantics = prompt_section(prompt, "semantics")?;
    let mut seen = BTreeSet::new();
    let mut interests = Vec::new();
    for line in semantics {
        let Some((kind, value)) = line.split_once(": ") else {
            continue;
        };
        let label = canonical_label(value);
        if label.is_empty() {
            continue;
        }
        let category = match (SemanticKind::parse(kind.trim()), lexicon::lookup(&label)) {
            (Some(SemanticKind::Activity | SemanticKind::Datetime | SemanticKind::Location), Some(term)) => {
                term.class.interest_category()
            }
            (Some(SemanticKind::Location), None) => Some(InterestCategory::Location),
            _ => None,
        };
        if let Some(category) = category {
            if seen.insert(label.clone()) {
                interests.push(json!({"label": label, "category": category}));
            }
        }
    }
    Some(json!({"interests": interests}).to_string())
}

fn relevance_filter(prompt: &str) -> Option<String> {
    let query = prompt_section(prompt, "query")?.join(" ");
    let query_tokens = tokens(&query);
    let mut relevant = Vec::new();
    for line in prompt_section(prompt, "interests")? {
        let mut parts = line.split(" | ");
        let (Some(id), Some(label)) = (parts.next(), parts.next()) else {
            continue;
        };
        if label_forms(label.trim())
            .iter()
            .any(|form| contains_phrase(&query_tokens, form))
        {
            relevant.push(id.trim().to_owned());
        }
    }
    Some(json!({"relevant_interest_ids": relevant}).to_string())
}

fn response_generation(prompt: &str) -> Option<String> {
    let context = prompt_section(prompt, "context")?;
    let mut items = Vec::new();
    let mut current: Option<(Vec<String>, Option<String>)> = None;
    let flush = |block: Option<(Vec<String>, Option<String>)>, items: &mut Vec<serde_json::Value>| {
        if let Some((refs, Some(text))) = block {
            items.push(json!({"text": text, "memory_ids": refs}));
        }
    };
    for line in context {
        if let Some(refs) = line.strip_prefix("### refs:") {
            flush(current.take(), &mut items);
            let refs = refs
                .split(',')
                .map(str::trim)
                .filter(|r| !r.is_empty())
                .map(str::to_owned)
                .collect();
            current = Some((refs, None));
        } else if let Some((_, text @ None)) = current.as_mut() {
            if !line.trim().is_empty() {
                *text = Some(line.trim().to_owned());
            }
        }
    }
    flush(current.take(), &mut items);
    Some(json!({"items": items}).to_string())
}
