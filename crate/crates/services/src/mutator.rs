//! Turning sampled programs into a new candidate: either an LLM behind a
//! chat-completions endpoint or the deterministic kernelscript mutator.

use std::path::PathBuf;
use std::time::Duration;

use ahd_core::evolution::StoredProgram;
use ahd_core::kernelscript::{mutate, KernelProgram, MutationPolicy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENDPOINT_ENV: &str = "AHD_LLM_ENDPOINT";
pub const API_KEY_ENV: &str = "AHD_LLM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutatorError {
    #[error("llm request timed out")]
    LlmTimeout,
    #[error("bad llm response: {0}")]
    LlmBadResponse(String),
    #[error("no sampled programs to mutate")]
    NoSamples,
    #[error("invalid mutator config: {0}")]
    InvalidConfig(String),
    #[error("prompt template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutatorMode {
    Llm,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutatorConfig {
    pub mode: MutatorMode,
    /// Full chat-completions URL; falls back to `AHD_LLM_ENDPOINT`.
    pub endpoint: Option<String>,
    pub model: String,
    pub prompt_template: Option<PathBuf>,
    pub examples_per_prompt: usize,
    pub timeout_ms: u64,
    /// Edit mix of the mock mutator.
    pub policy: MutationPolicy,
}

impl Default for MutatorConfig {
    fn default() -> Self {
        MutatorConfig {
            mode: MutatorMode::Mock,
            endpoint: None,
            model: "default".into(),
            prompt_template: None,
            examples_per_prompt: 4,
            timeout_ms: 60_000,
            policy: MutationPolicy::default(),
        }
    }
}

impl MutatorConfig {
    pub fn resolved_endpoint(&self) -> Option<String> {
        self.endpoint.clone().or_else(|| std::env::var(ENDPOINT_ENV).ok()).filter(|s| !s.trim().is_empty())
    }

    pub fn validate(&self) -> Result<(), MutatorError> {
        if self.examples_per_prompt == 0 {
            return Err(MutatorError::InvalidConfig("examples_per_prompt must be at least 1".into()));
        }
        if self.mode == MutatorMode::Llm && self.resolved_endpoint().is_none() {
            return Err(MutatorError::InvalidConfig(format!("llm mode needs `endpoint` or {ENDPOINT_ENV}")));
        }
        Ok(())
    }

    pub fn template(&self) -> Result<String, MutatorError> {
        match &self.prompt_template {
            Some(p) => std::fs::read_to_string(p).map_err(|e| MutatorError::Template(format!("{}: {e}", p.display()))),
            None => Ok(DEFAULT_TEMPLATE.to_string()),
        }
    }
}

pub const DEFAULT_TEMPLATE: &str = "\
You improve check-node update rules for an LDPC belief-propagation decoder.
A rule is a short program in this language:

  program := { ident = expr NEWLINE } return ident
  L is the row of incoming LLRs; every value is a per-edge vector.
  unary: tanh atanh log exp abs sgn neg
  binary: + - * / min max, and clamp(x, lo, hi)
  reductions: sum_excl prod_excl min_excl signprod_excl (leave-one-out)
              sum_all prod_all min_all signprod_all (whole row)

Higher scores are better. The programs below are sorted from worst to best.

{examples}
Write one new program that should score higher than all of them.
Reply with the program only.
";

/// Fills `{examples}` with the samples, best last.
pub fn render_prompt(template: &str, samples: &[StoredProgram]) -> String {
    let mut ex = String::new();
    for (i, s) in samples.iter().enumerate() {
        ex.push_str(&format!("# program {} (score {})\n{}\n\n", i + 1, s.score(), s.program.source));
    }
    template.replace("{examples}", &ex)
}

/// Program text of a reply: the first fenced block if any, else the
/// whole reply.
pub fn extract_program(reply: &str) -> String {
    if let Some(start) = reply.find("```") {
        let rest = &reply[start + 3..];
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim().to_string();
    }
    reply.trim().to_string()
}

/// A proposed program, possibly unparseable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub source: String,
    pub parent_hashes: Vec<String>,
    pub generation: u32,
}

/// Applies the kernelscript mutator to the best sample, using the others
/// as splice donors.
pub fn mock_mutate(samples: &[StoredProgram], seed: u64, policy: &MutationPolicy) -> Result<Candidate, MutatorError> {
    let best = samples.last().ok_or(MutatorError::NoSamples)?;
    let parent = KernelProgram::from_record(&best.program).map_err(|e| MutatorError::LlmBadResponse(e.to_string()))?;
    let donors: Vec<KernelProgram> =
        samples[..samples.len() - 1].iter().filter_map(|s| KernelProgram::from_record(&s.program).ok()).collect();
    let child = mutate(&parent, &donors, seed, policy);
    Ok(Candidate { source: child.source().to_string(), parent_hashes: child.parent_hashes.clone(), generation: child.generation })
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl LlmClient {
    pub fn from_config(cfg: &MutatorConfig) -> Result<Self, MutatorError> {
        cfg.validate()?;
        let endpoint = cfg.resolved_endpoint().ok_or_else(|| MutatorError::InvalidConfig("no endpoint".into()))?;
        Ok(LlmClient {
            http: reqwest::Client::new(),
            endpoint,
            model: cfg.model.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_millis(cfg.timeout_ms),
        })
    }

    /// One chat-completions round trip; returns the first choice's text.
    pub async fn complete(&self, prompt: &str) -> Result<String, MutatorError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let mut req = self.http.post(&self.endpoint).timeout(self.timeout).json(&body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let bad = |e: reqwest::Error| {
            if e.is_timeout() {
                MutatorError::LlmTimeout
            } else {
                MutatorError::LlmBadResponse(e.to_string())
            }
        };
        let resp = req.send().await.map_err(bad)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(MutatorError::LlmBadResponse(format!("HTTP {}", status.as_u16())));
        }
        let parsed: ChatResponse = resp.json().await.map_err(bad)?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| MutatorError::LlmBadResponse("no choices".into()))
    }
}

/// Either mutator behind one call.
#[derive(Debug, Clone)]
pub enum Mutator {
    Mock(MutationPolicy),
    Llm { client: LlmClient, template: String },
}

impl Mutator {
    pub fn from_config(cfg: &MutatorConfig) -> Result<Self, MutatorError> {
        cfg.validate()?;
        Ok(match cfg.mode {
            MutatorMode::Mock => Mutator::Mock(cfg.policy.clone()),
            MutatorMode::Llm => Mutator::Llm { client: LlmClient::from_config(cfg)?, template: cfg.template()? },
        })
    }

    pub async fn propose(&self, samples: &[StoredProgram], seed: u64) -> Result<Candidate, MutatorError> {
        match self {
            Mutator::Mock(policy) => mock_mutate(samples, seed, policy),
            Mutator::Llm { client, template } => {
                let best = samples.last().ok_or(MutatorError::NoSamples)?;
                let reply = client.complete(&render_prompt(template, samples)).await?;
                Ok(Candidate {
                    source: extract_program(&reply),
                    parent_hashes: vec![best.program.content_hash.clone()],
                    generation: best.program.generation + 1,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_fenced_code() {
        assert_eq!(extract_program("return L"), "return L");
        assert_eq!(extract_program("Sure:\n```text\nm = abs(L)\nreturn m\n```\nDone."), "m = abs(L)\nreturn m");
        assert_eq!(extract_program("```\nreturn L"), "return L");
    }

    #[test]
    fn llm_mode_needs_an_endpoint() {
        let c = MutatorConfig { mode: MutatorMode::Llm, endpoint: Some("http://x/v1/chat/completions".into()), ..Default::default() };
        c.validate().unwrap();
        let c = MutatorConfig { examples_per_prompt: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
