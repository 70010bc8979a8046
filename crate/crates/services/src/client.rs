//! HTTP clients for the database and evaluator services, with exponential
//! backoff on connection errors and `503`.

use std::time::Duration;

use ahd_core::evolution::{RegisterOutcome, ResetEntry, StoredProgram};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::wire::{
    CandidateSubmission, EvaluationResult, HealthPayload, MessageKind, ResetResponse, SampleResponse, ScoreReport,
    SkipReport, StatsPayload, WireEnvelope,
};
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backoff {
    pub initial_ms: u64,
    pub max_ms: u64,
    /// Attempts after the first; `None` retries forever.
    pub max_retries: Option<u32>,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { initial_ms: 25, max_ms: 2000, max_retries: Some(40) }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.initial_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_ms);
        Duration::from_millis(ms)
    }
}

fn retryable(e: &ServiceError) -> bool {
    match e {
        ServiceError::Transport(e) => e.is_connect() || e.is_timeout() || e.is_request(),
        ServiceError::Status { status, .. } => *status == 503,
        _ => false,
    }
}

#[derive(Debug, Clone)]
struct Http {
    client: reqwest::Client,
    base: String,
    backoff: Backoff,
}

impl Http {
    fn new(base: &str, backoff: Backoff) -> Self {
        let base = if base.starts_with("http://") || base.starts_with("https://") {
            base.trim_end_matches('/').to_string()
        } else {
            format!("http://{}", base.trim_end_matches('/'))
        };
        Http { client: reqwest::Client::new(), base, backoff }
    }

    async fn once(&self, path: &str, body: Option<&WireEnvelope>) -> Result<WireEnvelope, ServiceError> {
        let url = format!("{}{}", self.base, path);
        let req = match body {
            Some(b) => self.client.post(&url).json(b),
            None => self.client.get(&url),
        };
        let resp = req.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if !status.is_success() {
            return Err(ServiceError::Status {
                endpoint: path.split('?').next().unwrap_or(path).to_string(),
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        Ok(WireEnvelope::decode(&bytes)?)
    }

    async fn call<T: DeserializeOwned>(&self, path: &str, body: Option<&WireEnvelope>, kind: MessageKind) -> Result<T, ServiceError> {
        let mut attempt = 0;
        loop {
            match self.once(path, body).await {
                Ok(env) => return Ok(env.open(kind)?),
                Err(e) if retryable(&e) && self.backoff.max_retries.is_none_or(|m| attempt < m) => {
                    log::debug!("{path}: {e}; retrying");
                    tokio::time::sleep(self.backoff.delay(attempt)).await;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DbClient {
    http: Http,
}

impl DbClient {
    pub fn new(base: &str) -> Self {
        Self::with_backoff(base, Backoff::default())
    }

    pub fn with_backoff(base: &str, backoff: Backoff) -> Self {
        DbClient { http: Http::new(base, backoff) }
    }

    pub async fn sample(&self, island: usize, count: usize, seed: u64) -> Result<Vec<StoredProgram>, ServiceError> {
        let path = format!("/v1/sample?island={island}&count={count}&seed={seed}");
        let r: SampleResponse = self.http.call(&path, None, MessageKind::SampleResponse).await?;
        Ok(r.programs)
    }

    pub async fn register(&self, report: &ScoreReport) -> Result<RegisterOutcome, ServiceError> {
        let env = WireEnvelope::new(MessageKind::ScoreReport, report, Some(report.program.content_hash.clone()));
        self.http.call("/v1/register", Some(&env), MessageKind::ScoreReport).await
    }

    pub async fn skip(&self, island: Option<usize>, reason: &str) -> Result<(), ServiceError> {
        let env = WireEnvelope::new(MessageKind::ScoreReport, &SkipReport { island, reason: reason.to_string() }, None);
        let _: serde_json::Value = self.http.call("/v1/skip", Some(&env), MessageKind::ScoreReport).await?;
        Ok(())
    }

    pub async fn reset(&self) -> Result<Vec<ResetEntry>, ServiceError> {
        let env = WireEnvelope::new(MessageKind::ResetCommand, &serde_json::json!({}), None);
        let r: ResetResponse = self.http.call("/v1/reset", Some(&env), MessageKind::ResetCommand).await?;
        Ok(r.entries)
    }

    pub async fn stats(&self) -> Result<StatsPayload, ServiceError> {
        self.http.call("/v1/stats", None, MessageKind::StatsResponse).await
    }

    pub async fn health(&self) -> Result<HealthPayload, ServiceError> {
        self.http.call("/v1/health", None, MessageKind::StatsResponse).await
    }
}

#[derive(Debug, Clone)]
pub struct EvaluatorClient {
    http: Http,
}

impl EvaluatorClient {
    pub fn new(base: &str) -> Self {
        Self::with_backoff(base, Backoff::default())
    }

    pub fn with_backoff(base: &str, backoff: Backoff) -> Self {
        EvaluatorClient { http: Http::new(base, backoff) }
    }

    pub async fn evaluate(&self, sub: &CandidateSubmission) -> Result<EvaluationResult, ServiceError> {
        let env = WireEnvelope::new(MessageKind::CandidateSubmission, sub, None);
        self.http.call("/v1/evaluate", Some(&env), MessageKind::ScoreReport).await
    }
}
