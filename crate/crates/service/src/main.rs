use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use memgraph::corpus::Corpus;
use memgraph::eval::EvalFile;
use memgraph::graph::GraphDocument;
use memgraph::rag::Variant;
use memgraph::retrieval::RetrievalOutcome;
use memgraph_service::config::ProviderKind;
use memgraph_service::engine::{BenchRequest, ChatRequest, RagQueryRequest};
use memgraph_service::{server, ApiError, Engine, EngineConfig};
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Parser)]
#[command(name = "memgraph", version, about = "Personal memory graph engine")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    /// RAG variant; makes `ask` use the RAG baseline instead of the graph.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    chunk_length: Option<usize>,
    #[arg(long, global = true)]
    overlap: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a corpus file into the per-user graph files.
    Ingest {
        corpus: PathBuf,
        /// Only ingest this user from the corpus.
        #[arg(long)]
        user: Option<String>,
    },
    /// One-shot query.
    Ask {
        #[arg(long)]
        user: String,
        query: String,
    },
    /// Interactive retrieval loop on stdin; an empty line ends it.
    Chat {
        #[arg(long)]
        user: String,
    },
    /// Build and store the index for --variant (default from config).
    BuildIndex {
        #[arg(long)]
        user: String,
    },
    /// Run the benchmark (shipped fixture unless both files are given).
    Bench {
        #[arg(long, requires = "eval")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Check a stored graph or a graph file.
    Validate {
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        user: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Re-run interest extraction for every memory of a user.
    Reextract {
        #[arg(long)]
        user: String,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: memgraph::rag::RagError| e.to_string())
}

fn read(path: &Path) -> Result<String, ApiError> {
    std::fs::read_to_string(path).map_err(|e| ApiError::validation(format!("cannot read {}: {e}", path.display())))
}

fn config_from(cli: &Cli) -> Result<EngineConfig, ApiError> {
    let mut config = EngineConfig::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    if let Some(kind) = cli.provider {
        config.provider.kind = kind;
    }
    if let Some(v) = cli.variant {
        config.rag.variant = v;
    }
    if let Some(k) = cli.k {
        config.rag.top_k = k;
    }
    if let Some(l) = cli.chunk_length {
        config.rag.chunk_length = l;
    }
    if let Some(o) = cli.overlap {
        config.rag.overlap = o;
    }
    if let Command::Serve { bind, port } = &cli.command {
        if let Some(b) = bind {
            config.server.bind = b.clone();
        }
        if let Some(p) = port {
            config.server.port = *p;
        }
    }
    Ok(config)
}

fn emit<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn print_outcome(format: Format, outcome: &RetrievalOutcome, extra: serde_json::Value) {
    match format {
        Format::Json => {
            let mut v = serde_json::to_value(outcome).expect("outcome serializes");
            if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
                obj.extend(more);
            }
            emit(&v);
        }
        Format::Table => {
            println!("{}", outcome.response_text);
            if let Some(q) = &outcome.clarification_question {
                println!("? {q}");
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), ApiError> {
    let config = config_from(&cli)?;
    if let Command::Validate { file: Some(path), .. } = &cli.command {
        return validate_file(path, cli.format);
    }
    let engine = Engine::new(config)?;
    match &cli.command {
        Command::Ingest { corpus, user } => {
            let corpus = Corpus::from_json(&read(corpus)?)?;
            if let Some(u) = user {
                if !corpus.users.iter().any(|c| &c.user_id == u) {
                    return Err(ApiError::not_found(format!("corpus has no user {u}")));
                }
            }
            let mut out = serde_json::Map::new();
            for u in corpus.users.iter().filter(|c| user.as_ref().is_none_or(|x| x == &c.user_id)) {
                let ids = engine.ingest_corpus_user(u)?;
                out.insert(u.user_id.clone(), json!(ids));
            }
            match cli.format {
                Format::Json => emit(&json!({"ingested": out})),
                Format::Table => {
                    for (u, ids) in &out {
                        println!("{u}\t{}", ids.as_array().map_or(0, Vec::len));
                    }
                }
            }
        }
        Command::Ask { user, query } => {
            let outcome = match cli.variant {
                Some(v) => engine.rag_query(
                    user,
                    v,
                    &RagQueryRequest {
                        query: query.clone(),
                        ..RagQueryRequest::default()
                    },
                )?,
                None => {
                    engine
                        .chat(user, &ChatRequest {
                            query: query.clone(),
                            session_id: None,
                        })?
                        .outcome
                }
            };
            print_outcome(cli.format, &outcome, json!({}));
        }
        Command::Chat { user } => {
            let stdin = std::io::stdin();
            let mut session = None;
            for line in stdin.lock().lines() {
                let line = line.map_err(|e| ApiError::validation(format!("stdin: {e}")))?;
                if line.trim().is_empty() {
                    break;
                }
                let reply = engine.chat(user, &ChatRequest {
                    query: line,
                    session_id: session.clone(),
                })?;
                print_outcome(cli.format, &reply.outcome, json!({"session_id": reply.session_id}));
                let _ = std::io::stdout().flush();
                session = Some(reply.session_id);
            }
        }
        Command::BuildIndex { user } => {
            let summary = engine.build_index(user, engine.config().rag.variant)?;
            match cli.format {
                Format::Json => emit(&summary),
                Format::Table => println!("{}\t{}\t{} chunks", summary.user_id, summary.variant, summary.chunks),
            }
        }
        Command::Bench { corpus, eval } => {
            let request = BenchRequest {
                corpus: corpus.as_deref().map(read).transpose()?.map(|r| Corpus::from_json(&r)).transpose()?,
                cases: eval.as_deref().map(read).transpose()?.map(|r| EvalFile::from_json(&r)).transpose()?.map(|f| f.cases),
                rag: Some(engine.config().rag),
                strategies: None,
            };
            let report = engine.bench(&request)?;
            match cli.format {
                Format::Json => println!("{}", report.to_json()),
                Format::Table => print!("{}", report.to_table()),
            }
        }
        Command::Validate { user: Some(user), .. } => {
            let graph = engine.graph(user)?;
            report_violations(graph.validate(), graph.memory_count(), cli.format)?;
        }
        Command::Validate { .. } => unreachable!("clap requires --user or --file"),
        Command::Serve { .. } => serve(engine)?,
        Command::Reextract { user } => {
            let n = engine.reextract(user)?;
            match cli.format {
                Format::Json => emit(&json!({"user_id": user, "memories": n})),
                Format::Table => println!("{user}\t{n} memories re-extracted"),
            }
        }
    }
    Ok(())
}

fn report_violations(
    violations: Vec<memgraph::graph::Violation>,
    memories: usize,
    format: Format,
) -> Result<(), ApiError> {
    if !violations.is_empty() {
        return Err(ApiError::validation(format!("graph has {} violations", violations.len()))
            .with_detail(serde_json::to_value(&violations).unwrap_or_default()));
    }
    match format {
        Format::Json => emit(&json!({"valid": true, "memories": memories})),
        Format::Table => println!("valid\t{memories} memories"),
    }
    Ok(())
}

fn validate_file(path: &Path, format: Format) -> Result<(), ApiError> {
    let raw = read(path)?;
    let doc: GraphDocument = serde_json::from_str(&raw)
        .map_err(|e| ApiError::validation(format!("{} is not a graph document: {e}", path.display())))?;
    let memories = doc.memories.len();
    report_violations(doc.validate(), memories, format)
}

fn serve(engine: Engine) -> Result<(), ApiError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ApiError::validation(format!("cannot start runtime: {e}")))?;
    let engine = Arc::new(engine);
    runtime.block_on(async move {
        let server = &engine.config().server;
        let listener = server::bind(&server.bind, server.port).await?;
        if let Some(addr) = server::local_addr(&listener) {
            eprintln!("listening on http://{addr}");
        }
        server::serve(listener, engine.clone(), shutdown_signal()).await
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", ApiError::validation(first).with_detail(json!({"usage": message})).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
