#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use memgraph_service::{server, Engine, EngineConfig};
use serde_json::Value;
use tokio::sync::oneshot;

pub fn config(dir: &Path) -> EngineConfig {
    EngineConfig {
        data_dir: dir.to_path_buf(),
        ..EngineConfig::default()
    }
}

pub struct TestServer {
    pub base: String,
    pub engine: Arc<Engine>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(engine: Engine) -> Self {
        let engine = Arc::new(engine);
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let served = engine.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = server::bind("127.0.0.1", 0).await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                server::serve(listener, served, async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            engine,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn read(mut resp: ureq::http::Response<ureq::Body>) -> (u16, Value) {
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    let value = if text.is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or(Value::String(text))
    };
    (status, value)
}

pub fn get(base: &str, path: &str) -> (u16, Value) {
    read(agent().get(format!("{base}{path}")).call().unwrap())
}

pub fn post(base: &str, path: &str, body: &Value) -> (u16, Value) {
    read(agent().post(format!("{base}{path}")).send_json(body).unwrap())
}

pub fn post_raw(base: &str, path: &str, body: &str) -> (u16, Value) {
    read(
        agent()
            .post(format!("{base}{path}"))
            .header("Content-Type", "application/json")
            .send(body)
            .unwrap(),
    )
}

pub fn delete(base: &str, path: &str) -> (u16, Value) {
    read(agent().delete(format!("{base}{path}")).call().unwrap())
}

pub fn capture_json(text: &str, minute: u32) -> Value {
    serde_json::json!({
        "created_at": format!("2024-07-01T10:{minute:02}:00Z"),
        "conversation": [
            {"role": "assistant", "text": "Tell me about this moment.", "timestamp": format!("2024-07-01T10:{minute:02}:00Z")},
            {"role": "user", "text": text, "timestamp": format!("2024-07-01T10:{minute:02}:30Z")}
        ],
        "media": []
    })
}

pub mod kill {
    use std::path::Path;
    use std::process::{Command, Stdio};
    use std::time::Duration;

    use memgraph::corpus::{Corpus, UserCorpus};
    use memgraph::{Extractor, MemoryCapture, MockProvider, RelationalMemoryGraph};
    use memgraph_service::store::{FileStore, ENV_WRITE_PAUSE_MS};
    use rand::Rng;

    pub const USER: &str = "killme";

    #[derive(Debug, Default, Clone, Copy)]
    pub struct Tally {
        pub rounds: usize,
        pub untouched: usize,
        pub completed: usize,
    }

    fn capture(round: usize) -> MemoryCapture {
        let text = format!(
            "Round {round}: hiking with Priya near the lake, then a picnic. It was peaceful."
        );
        serde_json::from_value(super::capture_json(&text, (round % 60) as u32)).unwrap()
    }

    /// Runs `rounds` CLI ingests, each SIGKILLed at a random moment, and
    /// checks that every restart loads either the pre- or post-ingest graph.
    pub fn run(bin: &Path, dir: &Path, rounds: usize, seed: u64) -> Result<Tally, String> {
        let mut rng: rand::rngs::StdRng = rand::SeedableRng::seed_from_u64(seed);
        let extractor = Extractor::new(std::sync::Arc::new(MockProvider::new()));
        let corpus_path = dir.join("one.json");
        let data = dir.join("data");
        let mut tally = Tally::default();
        for round in 0..rounds {
            let store = FileStore::open(&data).map_err(|e| e.to_string())?;
            let pre = store
                .load_graph(USER)
                .map_err(|e| format!("round {round}: pre-load: {e}"))?
                .unwrap_or_else(|| RelationalMemoryGraph::new(USER));
            let cap = capture(round);
            let mut post = pre.clone();
            extractor.ingest_memory(&mut post, &cap).map_err(|e| e.to_string())?;
            let corpus = Corpus {
                version: 1,
                users: vec![UserCorpus {
                    user_id: USER.into(),
                    memories: vec![cap],
                }],
            };
            std::fs::write(&corpus_path, corpus.to_json()).map_err(|e| e.to_string())?;

            let pause = 150u64;
            let kill_after = rng.gen_range(0..pause + 60);
            let mut child = Command::new(bin)
                .arg("--data-dir")
                .arg(&data)
                .arg("ingest")
                .arg(&corpus_path)
                .env(ENV_WRITE_PAUSE_MS, pause.to_string())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| e.to_string())?;
            std::thread::sleep(Duration::from_millis(kill_after));
            let _ = child.kill();
            let _ = child.wait();

            let restarted = FileStore::open(&data)
                .and_then(|s| s.load_graph(USER))
                .map_err(|e| format!("round {round}: restart load failed: {e}"))?
                .unwrap_or_else(|| RelationalMemoryGraph::new(USER));
            let got = restarted.to_json();
            if got == pre.to_json() {
                tally.untouched += 1;
            } else if got == post.to_json() {
                tally.completed += 1;
            } else {
                return Err(format!("round {round}: restarted graph is neither pre nor post"));
            }
            if !restarted.validate().is_empty() {
                return Err(format!("round {round}: restarted graph is invalid"));
            }
            tally.rounds += 1;
        }
        Ok(tally)
    }
}
