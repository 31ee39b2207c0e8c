//! Provider abstraction for every LLM step, with strict structured output.
//!
//! Providers return raw text. [`complete_structured`] parses it as JSON into
//! the schema's output type (unknown fields rejected), runs caller-supplied
//! checks, and re-asks the provider up to `retries` more times before giving
//! up with the last raw output attached.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::graph::{InterestCategory, InterestId, MemoryId, SemanticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    SemanticExtraction,
    InterestExtraction,
    RelevanceFilter,
    ResponseGeneration,
}

impl Schema {
    pub fn as_str(self) -> &'static str {
        match self {
            Schema::SemanticExtraction => "semantic-extraction",
            Schema::InterestExtraction => "interest-extraction",
            Schema::RelevanceFilter => "relevance-filter",
            Schema::ResponseGeneration => "response-generation",
        }
    }

    /// Output contract appended to every prompt for this schema.
    pub fn instructions(self) -> &'static str {
        match self {
            Schema::SemanticExtraction => {
                "Respond with only this JSON object and no other fields:\n\
                 {\"semantics\":[{\"kind\":\"<kind>\",\"value\":\"<text>\"}],\"summary\":\"<text>\"}"
            }
            Schema::InterestExtraction => {
                "Respond with only this JSON object and no other fields:\n\
                 {\"interests\":[{\"label\":\"<text>\",\"category\":\"<category>\"}]}"
            }
            Schema::RelevanceFilter => {
                "Respond with only this JSON object and no other fields:\n\
                 {\"relevant_interest_ids\":[\"<interest id>\"]}"
            }
            Schema::ResponseGeneration => {
                "Respond with only this JSON object and no other fields:\n\
                 {\"items\":[{\"text\":\"<one line>\",\"memory_ids\":[\"<memory id>\"]}]}"
            }
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub expected_schema: Schema,
    pub max_output_size: usize,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("provider transport failure: {0}")]
    Transport(String),
    #[error("provider timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("provider misconfigured: {0}")]
    Config(String),
}

/// Anything that completes a prompt. Shared across threads.
pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{schema} output rejected after {attempts} attempts: {reason}")]
    Schema {
        schema: Schema,
        attempts: u32,
        reason: String,
        raw: String,
    },
}

pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_OUTPUT: usize = 64 * 1024;

/// Output types that can be requested from a provider.
pub trait StructuredOutput: DeserializeOwned {
    const SCHEMA: Schema;

    /// Checks beyond the JSON shape.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractedFact {
    pub kind: SemanticKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticExtractionOutput {
    pub semantics: Vec<ExtractedFact>,
    pub summary: String,
}

impl StructuredOutput for SemanticExtractionOutput {
    const SCHEMA: Schema = Schema::SemanticExtraction;

    fn check(&self) -> Result<(), String> {
        if self.summary.trim().is_empty() {
            return Err("summary is empty".into());
        }
        for fact in &self.semantics {
            if fact.kind == SemanticKind::Summary {
                return Err("summary must be returned in the summary field".into());
            }
            if fact.value.trim().is_empty() {
                return Err(format!("empty {} value", fact.kind.as_str()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractedInterest {
    pub label: String,
    pub category: InterestCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterestExtractionOutput {
    pub interests: Vec<ExtractedInterest>,
}

impl StructuredOutput for InterestExtractionOutput {
    const SCHEMA: Schema = Schema::InterestExtraction;

    fn check(&self) -> Result<(), String> {
        match self
            .interests
            .iter()
            .find(|i| crate::graph::canonical_label(&i.label).is_empty())
        {
            Some(bad) => Err(format!("interest label {:?} is empty", bad.label)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceOutput {
    pub relevant_interest_ids: Vec<InterestId>,
}

impl StructuredOutput for RelevanceOutput {
    const SCHEMA: Schema = Schema::RelevanceFilter;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseItem {
    pub text: String,
    pub memory_ids: Vec<MemoryId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseOutput {
    pub items: Vec<ResponseItem>,
}

impl StructuredOutput for ResponseOutput {
    const SCHEMA: Schema = Schema::ResponseGeneration;

    fn check(&self) -> Result<(), String> {
        for item in &self.items {
            if item.text.trim().is_empty() {
                return Err("response item with empty text".into());
            }
            if item.memory_ids.is_empty() {
                return Err("response item cites no memory".into());
            }
        }
        Ok(())
    }
}

/// Sends `request` and parses the reply as `T`, retrying on schema failures.
///
/// Transport errors are returned immediately. `extra` runs after the schema's
/// own checks, e.g. to enforce that returned ids come from the prompt.
pub fn complete_structured<T, F>(
    provider: &dyn LlmProvider,
    request: &LlmRequest,
    retries: u32,
    extra: F,
) -> Result<T, LlmError>
where
    T: StructuredOutput,
    F: Fn(&T) -> Result<(), String>,
{
    if request.prompt.trim().is_empty() {
        return Err(LlmError::InvalidRequest("prompt is empty".into()));
    }
    if request.expected_schema != T::SCHEMA {
        return Err(LlmError::InvalidRequest(format!(
            "request expects {} but caller parses {}",
            request.expected_schema,
            T::SCHEMA
        )));
    }
    let attempts = retries + 1;
    let mut last = (String::new(), String::new());
    for _ in 0..attempts {
        let raw = provider.complete(request)?;
        match parse_checked::<T, F>(&raw, request.max_output_size, &extra) {
            Ok(value) => return Ok(value),
            Err(reason) => last = (reason, raw),
        }
    }
    Err(LlmError::Schema {
        schema: T::SCHEMA,
        attempts,
        reason: last.0,
        raw: last.1,
    })
}

fn parse_checked<T, F>(raw: &str, max: usize, extra: &F) -> Result<T, String>
where
    T: StructuredOutput,
    F: Fn(&T) -> Result<(), String>,
{
    if raw.len() > max {
        return Err(format!("output of {} bytes exceeds limit {max}", raw.len()));
    }
    let value: T = serde_json::from_str(raw.trim()).map_err(|e| e.to_string())?;
    value.check()?;
    extra(&value)?;
    Ok(value)
}

/// A versioned prompt template with `{{name}}` placeholders.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub schema: Schema,
    pub body: &'static str,
}

impl PromptTemplate {
    pub const SEMANTIC_EXTRACTION: PromptTemplate = PromptTemplate {
        schema: Schema::SemanticExtraction,
        body: include_str!("../prompts/semantic_extraction.txt"),
    };
    pub const INTEREST_EXTRACTION: PromptTemplate = PromptTemplate {
        schema: Schema::InterestExtraction,
        body: include_str!("../prompts/interest_extraction.txt"),
    };
    pub const RELEVANCE_FILTER: PromptTemplate = PromptTemplate {
        schema: Schema::RelevanceFilter,
        body: include_str!("../prompts/relevance_filter.txt"),
    };
    pub const RESPONSE_GENERATION: PromptTemplate = PromptTemplate {
        schema: Schema::ResponseGeneration,
        body: include_str!("../prompts/response_generation.txt"),
    };

    /// Fills placeholders; `{{schema}}` is always the schema's instructions.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = self
            .body
            .replace("{{schema}}", self.schema.instructions());
        for (key, value) in values {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }

    pub fn request(&self, values: &[(&str, &str)], max_output_size: usize) -> LlmRequest {
        LlmRequest {
            prompt: self.render(values),
            expected_schema: self.schema,
            max_output_size,
        }
    }
}

/// Lines between `<tag>` and `</tag>` in a rendered prompt.
pub fn prompt_section<'a>(prompt: &'a str, tag: &str) -> Option<Vec<&'a str>> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut lines = prompt.lines();
    lines.by_ref().find(|l| l.trim() == open)?;
    let mut out = Vec::new();
    for line in lines {
        if line.trim() == close {
            return Some(out);
        }
        out.push(line);
    }
    None
}
