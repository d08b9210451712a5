//! Producers of task outputs for original and compressed prompts.
//!
//! [`LocalOracle`] is deterministic and offline; [`RemoteOracle`] speaks the
//! chat-completions wire format; [`CachedOracle`] wraps either with a
//! persistent content-addressed store.

mod cache;
mod local;
mod remote;

pub use cache::{cache_key, clear_cache, cache_stats, CacheEntry, CacheStats, CachedOracle};
pub use local::{local_answer, local_summarize, LocalOracle};
pub use remote::{RemoteConfig, RemoteOracle, API_KEY_ENV};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

pub const SUMMARIZE_TEMPLATE: &str = "Summarize the following text:";
pub const QA_TEMPLATE: &str = "Answer the question using the context:";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OracleRequest {
    pub prompt: String,
    pub question: Option<String>,
    pub task: Task,
    pub max_output_tokens: usize,
}

impl OracleRequest {
    pub fn new(
        prompt: impl Into<String>,
        question: Option<String>,
        task: Task,
        max_output_tokens: usize,
    ) -> Result<Self> {
        let req = Self {
            prompt: prompt.into(),
            question,
            task,
            max_output_tokens,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Qa && self.question.is_none() {
            return Err(Error::Config("qa request without a question".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Local,
    Remote,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub text: String,
    pub source: ResponseSource,
    pub latency_ms: Option<u64>,
    /// Number of HTTP attempts for remote responses; 1 otherwise.
    pub attempts: u32,
}

impl OracleResponse {
    pub(crate) fn local(text: String) -> Self {
        Self {
            text,
            source: ResponseSource::Local,
            latency_ms: None,
            attempts: 1,
        }
    }
}

/// Anything that maps a request to generated text.
pub trait Oracle: Send + Sync {
    /// Stable identity; part of every cache key.
    fn id(&self) -> String;

    fn generate(&self, request: &OracleRequest) -> Result<OracleResponse>;
}

impl<O: Oracle + ?Sized> Oracle for Arc<O> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn generate(&self, request: &OracleRequest) -> Result<OracleResponse> {
        (**self).generate(request)
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn id(&self) -> String {
        (**self).id()
    }

    fn generate(&self, request: &OracleRequest) -> Result<OracleResponse> {
        (**self).generate(request)
    }
}

impl Oracle for Box<dyn Oracle> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn generate(&self, request: &OracleRequest) -> Result<OracleResponse> {
        (**self).generate(request)
    }
}
