//! Chat-completion backend: one HTTP request per step.

use std::env;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::generator::{GeneratorBackend, GeneratorError};
use crate::retrieval::Insight;
use crate::types::{MultimodalQuery, ReasoningPath, ReasoningStep};

pub const ENV_URL: &str = "RAGMCTS_ENDPOINT_URL";
pub const ENV_API_KEY: &str = "RAGMCTS_API_KEY";
pub const ENV_MODEL: &str = "RAGMCTS_MODEL";

pub const PROMPT_VERSION: &str = "step-v1";
const SYSTEM_PROMPT: &str = "You solve multimodal math problems one reasoning step at a time. \
Reply with a single line. When the step gives the final result, write \
\"the answer is <answer> <END>\".";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    /// Total attempts per request, the first included.
    pub max_attempts: usize,
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            api_key: None,
            model: "default".into(),
            max_tokens: 256,
            timeout_ms: 30_000,
            max_attempts: 3,
            backoff_ms: 200,
        }
    }
}

impl RemoteConfig {
    /// Apply `endpoint.*` pairs from a config file, then environment
    /// overrides.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, String> {
        let mut c = Self::default();
        for (k, v) in pairs {
            let num = |v: &str| v.parse::<u64>().map_err(|_| format!("bad value for endpoint.{k}: {v}"));
            match k.as_str() {
                "url" => c.url = v.clone(),
                "api_key" => c.api_key = Some(v.clone()),
                "model" => c.model = v.clone(),
                "max_tokens" => c.max_tokens = num(v)? as u32,
                "timeout_ms" => c.timeout_ms = num(v)?,
                "max_attempts" => c.max_attempts = num(v)? as usize,
                "backoff_ms" => c.backoff_ms = num(v)?,
                _ => return Err(format!("unknown key endpoint.{k}")),
            }
        }
        if let Ok(v) = env::var(ENV_URL) {
            c.url = v;
        }
        if let Ok(v) = env::var(ENV_API_KEY) {
            c.api_key = Some(v);
        }
        if let Ok(v) = env::var(ENV_MODEL) {
            c.model = v;
        }
        if c.max_attempts == 0 {
            return Err("endpoint.max_attempts must be positive".into());
        }
        Ok(c)
    }
}

/// The user message sent for one step.
pub fn build_prompt(query: &MultimodalQuery, path: &ReasoningPath, insight: Option<&Insight>) -> String {
    let mut out = format!("Question: {}\n", query.text);
    if let Some(img) = &query.image_ref {
        out.push_str(&format!("Image: {img}\n"));
    }
    if !path.is_empty() {
        out.push_str("Steps so far:\n");
        for (i, s) in path.steps().iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, s.text()));
        }
    }
    if let Some(ins) = insight {
        out.push_str(&format!("Reference insight:\n{}\n", ins.entry.text));
    }
    out.push_str("Produce exactly one next step.");
    out
}

/// First non-blank line of `choices[0].message.content`.
pub fn parse_reply(body: &str) -> Result<String, GeneratorError> {
    if body.trim().is_empty() {
        return Err(GeneratorError::MalformedReply("empty body".into()));
    }
    let v: Value = serde_json::from_str(body).map_err(|e| GeneratorError::MalformedReply(e.to_string()))?;
    let content = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| GeneratorError::MalformedReply("missing choices[0].message.content".into()))?;
    content
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or_else(|| GeneratorError::MalformedReply("empty content".into()))
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post(&self, payload: &Value) -> Result<String, GeneratorError> {
        let mut last = GeneratorError::EndpointUnreachable("no attempt made".into());
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            let mut req = self.agent.post(&self.config.url).set("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(payload.clone()) {
                Ok(resp) => {
                    return resp
                        .into_string()
                        .map_err(|e| GeneratorError::MalformedReply(e.to_string()));
                }
                Err(ureq::Error::Status(429, _)) => {
                    last = GeneratorError::RateLimited(attempt + 1);
                }
                Err(ureq::Error::Status(code, _)) if code >= 500 => {
                    last = GeneratorError::EndpointUnreachable(format!("HTTP {code} after {} attempts", attempt + 1));
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(GeneratorError::EndpointUnreachable(format!("HTTP {code}")));
                }
                Err(ureq::Error::Transport(t)) => {
                    last = GeneratorError::EndpointUnreachable(format!("{t} after {} attempts", attempt + 1));
                }
            }
        }
        Err(last)
    }
}

impl GeneratorBackend for RemoteGenerator {
    /// The seed is not forwarded; determinism is up to the endpoint.
    fn generate_step(
        &self,
        query: &MultimodalQuery,
        path: &ReasoningPath,
        insight: Option<&Insight>,
        temperature: f64,
        _seed: u64,
    ) -> Result<ReasoningStep, GeneratorError> {
        let payload = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": build_prompt(query, path, insight)},
            ],
            "temperature": temperature,
            "max_tokens": self.config.max_tokens,
        });
        let body = self.post(&payload)?;
        let line = parse_reply(&body)?;
        Ok(ReasoningStep::new(line)
            .map_err(|e| GeneratorError::MalformedReply(e.to_string()))?
            .with_insight(insight.map(|i| i.entry.id.clone())))
    }
}
