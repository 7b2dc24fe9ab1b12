//! Chat-completions client backend.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::parse::parse_reply;
use super::prompt::{build_prompt, SYSTEM_PROMPT};
use super::{PlanningContext, Proposer, ProposerAction, ProposerError, ProposerReply};

pub const ENV_API_BASE: &str = "COVERAGE_PILOT_API_BASE";
pub const ENV_API_KEY: &str = "COVERAGE_PILOT_API_KEY";
pub const ENV_MODEL: &str = "COVERAGE_PILOT_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base address, e.g. `https://host/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Retries after the first attempt on transient failures.
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each later one.
    pub backoff_base: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
            temperature: 0.2,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }

    /// Read base address, credential and model from the environment.
    pub fn from_env() -> Result<Self, ProposerError> {
        let var = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| ProposerError::Config(format!("environment variable {name} is not set")))
        };
        Ok(Self::new(var(ENV_API_BASE)?, var(ENV_API_KEY)?, var(ENV_MODEL)?))
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

enum Failure {
    Transient(String),
    Permanent(String),
}

/// Sends each request as one system + one user message. The seed is passed
/// through, but replies are not reproducible in general.
#[derive(Debug, Clone)]
pub struct RemoteProposer {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteProposer {
    pub fn new(config: RemoteConfig) -> Result<Self, ProposerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProposerError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn from_env() -> Result<Self, ProposerError> {
        Self::new(RemoteConfig::from_env()?)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Failure> {
        let resp = self
            .client
            .post(self.config.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Permanent(format!("HTTP {status}")));
        }
        let completion: Completion = resp.json().map_err(|e| Failure::Permanent(format!("malformed completion: {e}")))?;
        Ok(completion.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
    }
}

impl Proposer for RemoteProposer {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn propose(&self, action: &ProposerAction, ctx: &PlanningContext<'_>, seed: u64) -> Result<ProposerReply, ProposerError> {
        if ctx.instruction.text.trim().is_empty() {
            return Err(ProposerError::EmptyInstruction);
        }
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "seed": seed,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": build_prompt(action, ctx)},
            ],
        });
        let started = Instant::now();
        let mut delay = self.config.backoff_base;
        let mut retries = 0;
        let text = loop {
            match self.attempt(&body) {
                Ok(text) => break text,
                Err(Failure::Transient(msg)) if retries < self.config.max_retries => {
                    log::warn!("proposer request failed ({msg}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    retries += 1;
                }
                Err(Failure::Transient(msg) | Failure::Permanent(msg)) => {
                    return Err(ProposerError::Unavailable(format!("{msg} after {} attempt(s)", retries + 1)));
                }
            }
        };
        let mut reply = parse_reply(action.kind(), &text)?;
        reply.latency = Some(started.elapsed());
        Ok(reply)
    }
}
