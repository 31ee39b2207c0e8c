//! wasm-bindgen surface for the single-page demo in `www/`.
//!
//! Every method returns a JSON string; errors become JS exceptions.

pub mod explore;

use memgraph::eval::Strategy;
use memgraph::rag::Variant;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub use explore::Explorer;

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Demo {
    inner: Explorer,
}

#[wasm_bindgen]
impl Demo {
    /// Ingests the shipped fixture corpus with the mock provider.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo { inner: Explorer::new() }
    }

    pub fn users(&self) -> Result<String, JsError> {
        to_js(Ok(self.inner.users()))
    }

    /// Fixture eval cases, so the page can offer sample queries.
    pub fn cases(&self) -> Result<String, JsError> {
        to_js(Ok(self.inner.cases()))
    }

    pub fn chunks(&self, user: &str, variant: &str, length: usize, overlap: usize) -> Result<String, JsError> {
        let variant: Variant = variant.parse().map_err(|e: memgraph::rag::RagError| JsError::new(&e.to_string()))?;
        to_js(self.inner.chunks(user, variant, length, overlap))
    }

    pub fn ask(&self, user: &str, query: &str, strategy: &str, k: usize) -> Result<String, JsError> {
        let strategy: Strategy = strategy.parse::<Strategy>().map_err(|e| JsError::new(&e.to_string()))?;
        to_js(self.inner.ask(user, query, strategy, k))
    }

    pub fn sweep(&self, max_k: usize) -> Result<String, JsError> {
        to_js(self.inner.sweep(max_k))
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}
