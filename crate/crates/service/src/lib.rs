//! Persistence, HTTP API and CLI plumbing around the memgraph engine.

pub mod config;
pub mod engine;
pub mod error;
pub mod http_provider;
pub mod server;
pub mod store;

pub use config::EngineConfig;
pub use engine::Engine;
pub use error::{ApiError, ErrorCode};
