//! The error shape every endpoint and CLI failure is reported in.

use std::fmt;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use memgraph::corpus::CorpusError;
use memgraph::eval::EvalError;
use memgraph::extraction::ExtractionError;
use memgraph::graph::GraphError;
use memgraph::llm::LlmError;
use memgraph::rag::RagError;
use memgraph::retrieval::RetrievalError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    ValidationFailed,
    ProviderFailed,
    Conflict,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::ValidationFailed => StatusCode::BAD_REQUEST,
            ErrorCode::ProviderFailed => StatusCode::BAD_GATEWAY,
            ErrorCode::Conflict => StatusCode::CONFLICT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ValidationFailed, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn provider(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ProviderFailed, message)
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("api error serializes")
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        match &e {
            GraphError::UnknownMemory(_) | GraphError::UnknownInterest(_) => ApiError::not_found(e.to_string()),
            GraphError::DuplicateMemory(_) | GraphError::DuplicateSemantic(_) | GraphError::SummaryConflict(_) => {
                ApiError::conflict(e.to_string())
            }
            GraphError::InvalidDocument(violations) => ApiError::validation(e.to_string())
                .with_detail(serde_json::to_value(violations).unwrap_or_default()),
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        match &e {
            LlmError::InvalidRequest(_) => ApiError::validation(e.to_string()),
            LlmError::Schema { raw, attempts, .. } => ApiError::provider(e.to_string())
                .with_detail(serde_json::json!({"attempts": attempts, "last_reply": raw})),
            LlmError::Provider(_) => ApiError::provider(e.to_string()),
        }
    }
}

impl From<ExtractionError> for ApiError {
    fn from(e: ExtractionError) -> Self {
        match e {
            ExtractionError::Llm(inner) => inner.into(),
            ExtractionError::Graph(inner) => inner.into(),
            other => ApiError::validation(other.to_string()),
        }
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::UnknownSession(_) => ApiError::not_found(e.to_string()),
            RetrievalError::Llm(inner) => inner.into(),
            RetrievalError::Graph(inner) => inner.into(),
            RetrievalError::EmptyQuery => ApiError::validation(e.to_string()),
        }
    }
}

impl From<RagError> for ApiError {
    fn from(e: RagError) -> Self {
        match e {
            RagError::Llm(inner) => inner.into(),
            RagError::Graph(inner) => inner.into(),
            RagError::Embedding(_) => ApiError::provider(e.to_string()),
            RagError::StaleIndex(_) | RagError::VariantMismatch { .. } => ApiError::conflict(e.to_string()),
            other => ApiError::validation(other.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Retrieval { source, .. } => source.into(),
            EvalError::Rag { source, .. } | EvalError::Index(source) => source.into(),
            other => ApiError::validation(other.to_string()),
        }
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Ingest { source, user, index } => {
                let mut err = ApiError::from(source);
                err.message = format!("user {user}, memory #{index}: {}", err.message);
                err
            }
            other => ApiError::validation(other.to_string()),
        }
    }
}
