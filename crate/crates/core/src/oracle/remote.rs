use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use ureq::Agent;

use super::{Oracle, OracleRequest, OracleResponse, ResponseSource, QA_TEMPLATE, SUMMARIZE_TEMPLATE};
use crate::corpus::Task;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "TACO_API_KEY";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on every further retry.
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub summarize_template: String,
    pub qa_template: String,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            max_attempts: 5,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
            summarize_template: SUMMARIZE_TEMPLATE.into(),
            qa_template: QA_TEMPLATE.into(),
        }
    }

    /// Credential from `TACO_API_KEY`; a missing or empty key is a
    /// configuration error.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(endpoint, model, key)),
            _ => Err(Error::Config(format!("{API_KEY_ENV} is not set"))),
        }
    }
}

/// Client for a chat-completions compatible endpoint, always at
/// temperature 0.
#[derive(Debug, Clone)]
pub struct RemoteOracle {
    config: RemoteConfig,
    agent: Agent,
}

enum Attempt {
    Done(String),
    Retry(String),
}

impl RemoteOracle {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.endpoint.is_empty() || config.model.is_empty() {
            return Err(Error::Config("remote oracle needs endpoint and model".into()));
        }
        if config.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// The JSON body sent for a request.
    pub fn request_body(&self, request: &OracleRequest) -> Value {
        let (instruction, user) = match request.task {
            Task::Summarization => (&self.config.summarize_template, request.prompt.clone()),
            Task::Qa => (
                &self.config.qa_template,
                format!(
                    "Context: {}\n\nQuestion: {}",
                    request.prompt,
                    request.question.as_deref().unwrap_or_default()
                ),
            ),
        };
        json!({
            "model": self.config.model,
            "temperature": 0,
            "max_tokens": request.max_output_tokens,
            "messages": [
                {"role": "system", "content": instruction},
                {"role": "user", "content": user},
            ],
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Result<Attempt> {
        let response = self
            .agent
            .post(&self.url())
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(format!("transport: {e}"))),
        };
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Ok(Attempt::Retry(format!("http status {status}")));
        }
        if !(200..300).contains(&status) {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(Error::Config(format!("endpoint rejected request ({status}): {detail}")));
        }
        let value: Value = match response.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => return Ok(Attempt::Retry(format!("unreadable body: {e}"))),
        };
        match value["choices"][0]["message"]["content"].as_str() {
            Some(text) => Ok(Attempt::Done(text.trim().to_string())),
            None => Err(Error::OracleUnavailable {
                attempts: 1,
                message: "response has no choices[0].message.content".into(),
            }),
        }
    }
}

impl Oracle for RemoteOracle {
    fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.summarize_template.as_bytes());
        h.update([0]);
        h.update(self.config.qa_template.as_bytes());
        format!("remote:{}:{}", self.config.model, hex::encode(&h.finalize()[..4]))
    }

    fn generate(&self, request: &OracleRequest) -> Result<OracleResponse> {
        request.validate()?;
        let body = self.request_body(request);
        let started = Instant::now();
        let mut last_error = String::new();
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                thread::sleep(self.config.initial_backoff * 2u32.pow(attempt - 2));
            }
            match self.attempt(&body)? {
                Attempt::Done(text) => {
                    return Ok(OracleResponse {
                        text,
                        source: ResponseSource::Remote,
                        latency_ms: Some(started.elapsed().as_millis() as u64),
                        attempts: attempt,
                    })
                }
                Attempt::Retry(reason) => {
                    log::warn!("oracle attempt {attempt} failed: {reason}");
                    last_error = reason;
                }
            }
        }
        Err(Error::OracleUnavailable {
            attempts: self.config.max_attempts,
            message: last_error,
        })
    }
}
