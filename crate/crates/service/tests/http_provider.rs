mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use memgraph::llm::{LlmProvider, LlmRequest, ProviderError, Schema};
use memgraph::MockProvider;
use memgraph_service::config::{ProviderConfig, ProviderKind};
use memgraph_service::engine::ChatRequest;
use memgraph_service::http_provider::HttpProvider;
use memgraph_service::{Engine, ErrorCode};
use serde_json::{json, Value};

type Seen = Arc<Mutex<Vec<(Option<String>, Value)>>>;

const SCHEMAS: [Schema; 4] = [
    Schema::SemanticExtraction,
    Schema::InterestExtraction,
    Schema::RelevanceFilter,
    Schema::ResponseGeneration,
];

/// Answers like the mock would, recovering the schema from the prompt's
/// output instructions.
async fn mock_backed(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_owned());
    seen.lock().unwrap().push((auth, body.clone()));
    let prompt = body["messages"][0]["content"].as_str().unwrap().to_owned();
    let schema = SCHEMAS.into_iter().find(|s| prompt.contains(s.instructions())).unwrap();
    let reply = MockProvider::new()
        .complete(&LlmRequest {
            prompt,
            expected_schema: schema,
            max_output_size: 1 << 16,
        })
        .unwrap();
    Json(json!({"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}}]}))
}

async fn failing() -> (StatusCode, &'static str) {
    (StatusCode::SERVICE_UNAVAILABLE, "overloaded")
}

async fn empty() -> Json<Value> {
    Json(json!({"choices": []}))
}

async fn slow() -> Json<Value> {
    tokio::time::sleep(Duration::from_secs(3)).await;
    Json(json!({"choices": []}))
}

fn fake_server() -> (String, Seen) {
    let seen: Seen = Arc::default();
    let app = Router::new()
        .route("/v1/chat/completions", post(mock_backed))
        .route("/failing", post(failing))
        .route("/empty", post(empty))
        .route("/slow", post(slow))
        .with_state(seen.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{}", rx.recv().unwrap()), seen)
}

fn http_config(endpoint: String, key_env: Option<&str>) -> ProviderConfig {
    ProviderConfig {
        kind: ProviderKind::Http,
        endpoint: Some(endpoint),
        model: Some("tiny-model".into()),
        api_key_env: key_env.map(str::to_owned),
        timeout_secs: 1,
        retries: 2,
    }
}

fn request() -> LlmRequest {
    LlmRequest {
        prompt: "hello".into(),
        expected_schema: Schema::RelevanceFilter,
        max_output_size: 1024,
    }
}

#[test]
fn sends_documented_shape_with_bearer_key() {
    let (base, seen) = fake_server();
    std::env::set_var("MEMGRAPH_TEST_KEY_SHAPE", "sekrit");
    let provider =
        HttpProvider::from_config(&http_config(format!("{base}/v1/chat/completions"), Some("MEMGRAPH_TEST_KEY_SHAPE")))
            .unwrap();
    let prompt = format!("<query>\ntrips\n</query>\n<interests>\n</interests>\n{}", Schema::RelevanceFilter.instructions());
    let reply = provider
        .complete(&LlmRequest {
            prompt: prompt.clone(),
            ..request()
        })
        .unwrap();
    assert!(serde_json::from_str::<Value>(&reply).is_ok());
    let (auth, body) = seen.lock().unwrap().pop().unwrap();
    assert_eq!(auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(
        body,
        json!({
            "model": "tiny-model",
            "messages": [{"role": "user", "content": prompt}],
            "response_format": {"type": "json_object"},
        })
    );
}

#[test]
fn transport_failures_map_to_provider_errors() {
    let (base, _) = fake_server();
    let call = |path: &str| HttpProvider::from_config(&http_config(format!("{base}{path}"), None)).unwrap().complete(&request());
    assert!(matches!(call("/failing"), Err(ProviderError::Transport(m)) if m.contains("503")));
    assert!(matches!(call("/empty"), Err(ProviderError::Transport(m)) if m.contains("no message")));
    assert!(matches!(call("/slow"), Err(ProviderError::Timeout(d)) if d == Duration::from_secs(1)));
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let refused = HttpProvider::from_config(&http_config(format!("http://{dead}/v1"), None))
        .unwrap()
        .complete(&request());
    assert!(matches!(refused, Err(ProviderError::Transport(_))));
}

#[test]
fn engine_over_http_matches_engine_over_mock() {
    let (base, seen) = fake_server();
    let corpus = memgraph::fixtures::corpus();
    let user = corpus.users.iter().find(|u| u.user_id == "alex").unwrap();

    let mock_dir = tempfile::tempdir().unwrap();
    let mock = Engine::new(common::config(mock_dir.path())).unwrap();
    let http_dir = tempfile::tempdir().unwrap();
    let mut cfg = common::config(http_dir.path());
    cfg.provider = http_config(format!("{base}/v1/chat/completions"), None);
    let http = Engine::new(cfg).unwrap();

    for u in [&mock, &http] {
        u.ingest_corpus_user(user).unwrap();
    }
    assert_eq!(mock.graph("alex").unwrap().to_json(), http.graph("alex").unwrap().to_json());
    let chat = ChatRequest {
        query: "Show me my ski trips".into(),
        session_id: None,
    };
    assert_eq!(mock.chat("alex", &chat).unwrap().outcome, http.chat("alex", &chat).unwrap().outcome);
    assert!(seen.lock().unwrap().len() >= 2 * user.memories.len());
}

#[test]
fn unreachable_provider_is_provider_failed_and_graph_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let mut cfg = common::config(dir.path());
    cfg.provider = http_config(format!("http://{dead}/v1/chat/completions"), None);
    let engine = Engine::new(cfg).unwrap();
    let capture: memgraph::MemoryCapture =
        serde_json::from_value(common::capture_json("A hike in the mountains", 3)).unwrap();
    let err = engine.ingest("zoe", &capture).unwrap_err();
    assert_eq!(err.code, ErrorCode::ProviderFailed);
    assert_eq!(engine.graph("zoe").unwrap().memory_count(), 0);
    assert!(!dir.path().join("users/zoe/graph.json").exists());
}

#[test]
fn per_schema_override_routes_requests() {
    let (base, seen) = fake_server();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::config(dir.path());
    cfg.providers
        .insert(Schema::RelevanceFilter, http_config(format!("{base}/v1/chat/completions"), None));
    let engine = Engine::new(cfg).unwrap();
    let capture: memgraph::MemoryCapture =
        serde_json::from_value(common::capture_json("Swimming at the lake with Ann", 4)).unwrap();
    engine.ingest("zoe", &capture).unwrap();
    assert!(seen.lock().unwrap().is_empty());
    let out = engine
        .chat("zoe", &ChatRequest { query: "the lake".into(), session_id: None })
        .unwrap();
    assert_eq!(out.outcome.retrieved_memories.len(), 1);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert!(seen[0].1["messages"][0]["content"].as_str().unwrap().contains("relevant_interest_ids"));
}
