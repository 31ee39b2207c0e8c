//! JSON-over-REST front end. Handlers run engine calls on the blocking pool.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use memgraph::rag::Variant;
use memgraph::{MemoryCapture, MemoryId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::engine::{AppendTurns, BenchRequest, CaptureStart, ChatRequest, Engine, RagQueryRequest};
use crate::error::ApiError;

type AppState = Arc<Engine>;
type ApiResult = Result<Response, ApiError>;

async fn blocking<T, F>(engine: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, ApiError> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::provider(format!("worker failed: {e}")))?
}

fn body<T: DeserializeOwned>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::validation(e.body_text()))
}

fn ok<T: Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

async fn health(State(engine): State<AppState>) -> ApiResult {
    ok(engine.health())
}

async fn ingest(
    State(engine): State<AppState>,
    Path(user): Path<String>,
    payload: Result<Json<MemoryCapture>, JsonRejection>,
) -> ApiResult {
    let capture = body(payload)?;
    let id = blocking(&engine, move |e| e.ingest(&user, &capture)).await?;
    Ok((StatusCode::CREATED, Json(json!({"memory_id": id}))).into_response())
}

async fn delete_memory(State(engine): State<AppState>, Path((user, memory)): Path<(String, String)>) -> ApiResult {
    let memory = MemoryId::new(memory);
    blocking(&engine, move |e| e.delete_memory(&user, &memory)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn append_turns(
    State(engine): State<AppState>,
    Path((user, memory)): Path<(String, String)>,
    payload: Result<Json<AppendTurns>, JsonRejection>,
) -> ApiResult {
    let turns = body(payload)?;
    let memory = MemoryId::new(memory);
    let id = memory.clone();
    blocking(&engine, move |e| e.extend_memory(&user, &memory, &turns.conversation)).await?;
    ok(json!({"memory_id": id}))
}

async fn graph(State(engine): State<AppState>, Path(user): Path<String>) -> ApiResult {
    ok(blocking(&engine, move |e| e.graph_document(&user)).await?)
}

async fn interests(State(engine): State<AppState>, Path(user): Path<String>) -> ApiResult {
    let list = blocking(&engine, move |e| e.interests(&user)).await?;
    ok(json!({"interests": list}))
}

async fn chat(
    State(engine): State<AppState>,
    Path(user): Path<String>,
    payload: Result<Json<ChatRequest>, JsonRejection>,
) -> ApiResult {
    let request = body(payload)?;
    ok(blocking(&engine, move |e| e.chat(&user, &request)).await?)
}

async fn rag_query(
    State(engine): State<AppState>,
    Path((user, variant)): Path<(String, String)>,
    payload: Result<Json<RagQueryRequest>, JsonRejection>,
) -> ApiResult {
    let variant: Variant = variant
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown rag variant {variant:?}")))?;
    let request = body(payload)?;
    ok(blocking(&engine, move |e| e.rag_query(&user, variant, &request)).await?)
}

async fn bench(State(engine): State<AppState>, payload: Result<Json<BenchRequest>, JsonRejection>) -> ApiResult {
    let request = body(payload)?;
    ok(blocking(&engine, move |e| e.bench(&request)).await?)
}

async fn start_capture(
    State(engine): State<AppState>,
    Path(user): Path<String>,
    payload: Result<Json<CaptureStart>, JsonRejection>,
) -> ApiResult {
    let start = body(payload)?;
    let view = blocking(&engine, move |e| e.start_capture(&user, start)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Answer {
    text: String,
}

async fn answer_capture(
    State(engine): State<AppState>,
    Path((user, id)): Path<(String, String)>,
    payload: Result<Json<Answer>, JsonRejection>,
) -> ApiResult {
    let answer = body(payload)?;
    ok(blocking(&engine, move |e| e.answer_capture(&user, &id, &answer.text)).await?)
}

async fn finish_capture(State(engine): State<AppState>, Path((user, id)): Path<(String, String)>) -> ApiResult {
    let memory = blocking(&engine, move |e| e.finish_capture(&user, &id)).await?;
    Ok((StatusCode::CREATED, Json(json!({"memory_id": memory}))).into_response())
}

async fn abandon_capture(State(engine): State<AppState>, Path((user, id)): Path<(String, String)>) -> ApiResult {
    blocking(&engine, move |e| e.abandon_capture(&user, &id)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/users/{user}/memories", post(ingest))
        .route("/users/{user}/memories/{memory}", delete(delete_memory))
        .route("/users/{user}/memories/{memory}/turns", post(append_turns))
        .route("/users/{user}/graph", get(graph))
        .route("/users/{user}/interests", get(interests))
        .route("/users/{user}/chat", post(chat))
        .route("/users/{user}/rag/{variant}/query", post(rag_query))
        .route("/users/{user}/captures", post(start_capture))
        .route("/users/{user}/captures/{id}", delete(abandon_capture))
        .route("/users/{user}/captures/{id}/answers", post(answer_capture))
        .route("/users/{user}/captures/{id}/finish", post(finish_capture))
        .route("/bench", post(bench))
        .fallback(fallback)
        .with_state(engine)
}

/// Binds the configured address. A busy port is reported as `conflict`.
pub async fn bind(bind: &str, port: u16) -> Result<TcpListener, ApiError> {
    TcpListener::bind((bind, port)).await.map_err(|e| {
        let err = if e.kind() == std::io::ErrorKind::AddrInUse {
            ApiError::conflict(format!("port {port} on {bind} is already in use"))
        } else {
            ApiError::validation(format!("cannot bind {bind}:{port}: {e}"))
        };
        err.with_detail(json!({"bind": bind, "port": port}))
    })
}

/// Serves until `shutdown` resolves, then drains in-flight requests. Every
/// mutation is persisted before its response is sent, so nothing is left to
/// flush afterwards.
pub async fn serve(
    listener: TcpListener,
    engine: Arc<Engine>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ApiError> {
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ApiError::validation(format!("server stopped: {e}")))
}

pub fn local_addr(listener: &TcpListener) -> Option<SocketAddr> {
    listener.local_addr().ok()
}
