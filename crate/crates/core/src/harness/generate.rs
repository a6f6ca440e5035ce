//! Candidate generation against an OpenAI-compatible completions endpoint.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{info, warn};

use super::data::ProblemRecord;
use crate::normalize::prepare_context;
use crate::statement::{Candidate, CandidatePool, GenerationConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenerateError {
    #[error("no endpoint configured; pass --endpoint URL (generation is the only command that uses the network)")]
    Offline,
    #[error("environment variable `{0}` holding the API token is not set")]
    MissingToken(String),
    #[error("prompt template must contain `{{informal}}`")]
    BadTemplate,
    #[error("{0}")]
    Config(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Request { attempts: u32, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub n: usize,
    pub max_tokens: u32,
    pub retries: u32,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>, temperature: f64, n: usize) -> Self {
        Self {
            url: url.into(),
            token_env: None,
            model: model.into(),
            temperature,
            n,
            max_tokens: 1024,
            retries: 4,
            initial_backoff: Duration::from_millis(500),
            request_timeout: Duration::from_secs(300),
        }
    }
}

/// Fills `{informal}` and `{context}` in a prompt template.
pub fn render_prompt(template: &str, problem: &ProblemRecord) -> String {
    let context = prepare_context(problem.context.as_deref().unwrap_or(""), problem.context_mode);
    template
        .replace("{context}", &context)
        .replace("{informal}", &problem.informal)
}

/// Outcome of a generation run. `failures` lists problems whose request
/// failed; their pools are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRun {
    pub pools: Vec<CandidatePool>,
    pub failures: Vec<(String, GenerateError)>,
}

pub struct Generator {
    cfg: EndpointConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl Generator {
    pub fn new(cfg: EndpointConfig) -> Result<Self, GenerateError> {
        if cfg.url.trim().is_empty() {
            return Err(GenerateError::Offline);
        }
        GenerationConfig::for_request(cfg.model.clone(), cfg.temperature, cfg.n)
            .validate()
            .map_err(GenerateError::Config)?;
        let token = match &cfg.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| GenerateError::MissingToken(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, token, agent })
    }

    fn request_once(&self, prompt: &str) -> Result<Vec<String>, (bool, String)> {
        let body = json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "temperature": self.cfg.temperature,
            "n": self.cfg.n,
            "max_tokens": self.cfg.max_tokens,
        });
        let mut req = self.agent.post(&self.cfg.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status >= 400 {
            // 429 and 5xx are transient; other client errors are not
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| (false, format!("invalid JSON: {e}")))?;
        let choices = value
            .get("choices")
            .and_then(Value::as_array)
            .ok_or((false, "response has no `choices` array".to_string()))?;
        Ok(choices
            .iter()
            .filter_map(|c| {
                c.get("text")
                    .and_then(Value::as_str)
                    .or_else(|| c.pointer("/message/content").and_then(Value::as_str))
                    .map(str::to_string)
            })
            .collect())
    }

    /// Posts one prompt, retrying transient failures with exponential
    /// backoff.
    pub fn complete(&self, prompt: &str) -> Result<Vec<String>, GenerateError> {
        let mut delay = self.cfg.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.request_once(prompt) {
                Ok(texts) => return Ok(texts),
                Err((retry, message)) => {
                    if !retry || attempt > self.cfg.retries {
                        return Err(GenerateError::Request {
                            attempts: attempt,
                            message,
                        });
                    }
                    warn!(attempt, %message, "generation request failed; retrying");
                    thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }

    pub fn generate(&self, problems: &[ProblemRecord], template: &str) -> Result<GenerationRun, GenerateError> {
        if !template.contains("{informal}") {
            return Err(GenerateError::BadTemplate);
        }
        let mut run = GenerationRun {
            pools: Vec::new(),
            failures: Vec::new(),
        };
        for p in problems {
            let prompt = render_prompt(template, p);
            match self.complete(&prompt) {
                Ok(texts) => {
                    if texts.len() < self.cfg.n {
                        warn!(problem = %p.problem_id, got = texts.len(), requested = self.cfg.n, "fewer completions than requested");
                    }
                    let gen_config = GenerationConfig::for_request(self.cfg.model.clone(), self.cfg.temperature, texts.len().max(1));
                    run.pools.push(CandidatePool {
                        problem_id: p.problem_id.clone(),
                        informal: p.informal.clone(),
                        context: prepare_context(p.context.as_deref().unwrap_or(""), p.context_mode),
                        context_mode: p.context_mode,
                        candidates: texts.into_iter().map(Candidate::raw).collect(),
                        gen_config,
                    });
                }
                Err(e) => {
                    warn!(problem = %p.problem_id, error = %e, "generation failed");
                    run.failures.push((p.problem_id.clone(), e));
                }
            }
        }
        info!(pools = run.pools.len(), failures = run.failures.len(), "generation finished");
        Ok(run)
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
