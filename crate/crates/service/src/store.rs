//! File-backed persistence: one graph document per user, one index per
//! RAG variant.
//!
//! Layout under the data directory:
//!
//! ```text
//! users/<user>/graph.json
//! users/<user>/index-v1.json   (v2, v3 likewise)
//! ```
//!
//! Every write goes to a temp file in the target directory, is fsynced, then
//! renamed over the target, so a reader or a restarted process sees either
//! the old bytes or the new bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use memgraph::rag::{Variant, VectorIndex};
use memgraph::RelationalMemoryGraph;

use crate::error::ApiError;

/// Test hook: milliseconds to sleep between the fsync of the temp file and
/// the rename. Used by the kill-and-restart harness to widen the window.
pub const ENV_WRITE_PAUSE_MS: &str = "MEMGRAPH_WRITE_PAUSE_MS";

const GRAPH_FILE: &str = "graph.json";

pub fn validate_user_id(user: &str) -> Result<(), ApiError> {
    let ok = (1..=64).contains(&user.len())
        && user
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(ApiError::validation(format!(
            "user id {user:?} must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}

fn io_error(what: &str, path: &Path, e: io::Error) -> ApiError {
    ApiError::validation(format!("{what} {}: {e}", path.display()))
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ApiError> {
        let root = root.into();
        let users = root.join("users");
        fs::create_dir_all(&users).map_err(|e| io_error("cannot create data directory", &users, e))?;
        fs::read_dir(&users).map_err(|e| io_error("cannot read data directory", &users, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn user_dir(&self, user: &str) -> PathBuf {
        self.root.join("users").join(user)
    }

    pub fn graph_path(&self, user: &str) -> PathBuf {
        self.user_dir(user).join(GRAPH_FILE)
    }

    pub fn index_path(&self, user: &str, variant: Variant) -> PathBuf {
        self.user_dir(user).join(format!("index-{variant}.json"))
    }

    /// Users that have a stored graph, sorted.
    pub fn users(&self) -> Result<Vec<String>, ApiError> {
        let dir = self.root.join("users");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_error("cannot list", &dir, e))? {
            let entry = entry.map_err(|e| io_error("cannot list", &dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if validate_user_id(&name).is_ok() && entry.path().join(GRAPH_FILE).is_file() {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }

    /// The stored graph, or `None` when the user has never been written.
    pub fn load_graph(&self, user: &str) -> Result<Option<RelationalMemoryGraph>, ApiError> {
        validate_user_id(user)?;
        let path = self.graph_path(user);
        let Some(raw) = read_optional(&path)? else {
            return Ok(None);
        };
        let graph = RelationalMemoryGraph::from_json(&raw).map_err(|e| {
            ApiError::from(e).with_detail(serde_json::json!({"file": path.display().to_string()}))
        })?;
        if graph.user_id() != user {
            return Err(ApiError::validation(format!(
                "{} belongs to user {:?}",
                path.display(),
                graph.user_id()
            )));
        }
        Ok(Some(graph))
    }

    pub fn save_graph(&self, graph: &RelationalMemoryGraph) -> Result<(), ApiError> {
        validate_user_id(graph.user_id())?;
        write_atomic(&self.graph_path(graph.user_id()), graph.to_json().as_bytes())
    }

    pub fn load_index(&self, user: &str, variant: Variant) -> Result<Option<VectorIndex>, ApiError> {
        validate_user_id(user)?;
        let path = self.index_path(user, variant);
        match read_optional(&path)? {
            Some(raw) => Ok(Some(VectorIndex::from_json(&raw)?)),
            None => Ok(None),
        }
    }

    pub fn save_index(&self, user: &str, index: &VectorIndex) -> Result<PathBuf, ApiError> {
        validate_user_id(user)?;
        let path = self.index_path(user, index.variant());
        write_atomic(&path, index.to_json().as_bytes())?;
        Ok(path)
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, ApiError> {
    match fs::read_to_string(path) {
        Ok(raw) => Ok(Some(raw)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_error("cannot read", path, e)),
    }
}

fn write_pause() -> Option<Duration> {
    let ms: u64 = std::env::var(ENV_WRITE_PAUSE_MS).ok()?.trim().parse().ok()?;
    (ms > 0).then(|| Duration::from_millis(ms))
}

/// Replaces `path` with `bytes` via temp file, fsync and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    let dir = path
        .parent()
        .ok_or_else(|| ApiError::validation(format!("{} has no parent directory", path.display())))?;
    fs::create_dir_all(dir).map_err(|e| io_error("cannot create", dir, e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".write-")
        .tempfile_in(dir)
        .map_err(|e| io_error("cannot create temp file in", dir, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| io_error("cannot write temp file for", path, e))?;
    if let Some(pause) = write_pause() {
        std::thread::sleep(pause);
    }
    tmp.persist(path)
        .map_err(|e| io_error("cannot replace", path, e.error))?;
    // Make the rename itself durable.
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use memgraph::graph::{ConversationTurn, MemoryNode};

    fn graph(user: &str) -> RelationalMemoryGraph {
        let mut g = RelationalMemoryGraph::new(user);
        let at = Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap();
        let id = g.next_memory_id();
        g.add_memory(MemoryNode {
            id,
            created_at: at,
            media_refs: vec![],
            conversation: vec![ConversationTurn::user("a day at the lake", at)],
            user_id: user.to_owned(),
        })
        .unwrap();
        g
    }

    #[test]
    fn user_ids_are_path_safe() {
        for ok in ["a", "alex_01", "A-b", &"x".repeat(64)] {
            validate_user_id(ok).unwrap();
        }
        for bad in ["", "..", "a/b", "a b", "é", &"x".repeat(65)] {
            assert!(validate_user_id(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn graph_round_trips_and_missing_is_none() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert!(store.load_graph("alex").unwrap().is_none());
        let g = graph("alex");
        store.save_graph(&g).unwrap();
        assert_eq!(store.load_graph("alex").unwrap().unwrap(), g);
        assert_eq!(store.users().unwrap(), ["alex"]);
        let leftovers: Vec<_> = fs::read_dir(store.user_dir("alex"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(leftovers, [std::ffi::OsString::from("graph.json")]);
    }

    #[test]
    fn rejects_graph_of_other_user_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        write_atomic(&store.graph_path("bea"), graph("alex").to_json().as_bytes()).unwrap();
        assert!(store.load_graph("bea").is_err());
        write_atomic(&store.graph_path("chen"), b"{\"version\":").unwrap();
        let err = store.load_graph("chen").unwrap_err();
        assert_eq!(err.code, crate::error::ErrorCode::ValidationFailed);
    }
}
