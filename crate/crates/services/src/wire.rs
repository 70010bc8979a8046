//! JSON envelope shared by every HTTP message, and the payloads it carries.

use ahd_core::evolution::{RegisterOutcome, ResetEntry, Stats, StoredProgram};
use ahd_core::kernelscript::ProgramRecord;
use ahd_core::scoring::ScoreRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    SampleRequest,
    SampleResponse,
    CandidateSubmission,
    ScoreReport,
    ResetCommand,
    StatsResponse,
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("unsupported protocol version `{0}`")]
    Version(String),
    #[error("expected a {expected:?} message, got {got:?}")]
    Kind { expected: MessageKind, got: MessageKind },
    #[error("bad {kind:?} payload: {msg}")]
    Payload { kind: MessageKind, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEnvelope {
    pub protocol_version: String,
    pub kind: MessageKind,
    pub payload: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl WireEnvelope {
    pub fn new<T: Serialize>(kind: MessageKind, payload: &T, idempotency_key: Option<String>) -> Self {
        WireEnvelope {
            protocol_version: PROTOCOL_VERSION.to_string(),
            kind,
            payload: serde_json::to_value(payload).expect("payloads serialize"),
            idempotency_key,
        }
    }

    /// Parses raw bytes; unknown kinds and wrong versions are rejected.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let env: WireEnvelope = serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
        if env.protocol_version != PROTOCOL_VERSION {
            return Err(WireError::Version(env.protocol_version));
        }
        Ok(env)
    }

    pub fn open<T: DeserializeOwned>(&self, expected: MessageKind) -> Result<T, WireError> {
        if self.kind != expected {
            return Err(WireError::Kind { expected, got: self.kind });
        }
        serde_json::from_value(self.payload.clone()).map_err(|e| WireError::Payload { kind: expected, msg: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub island: usize,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub island: usize,
    pub programs: Vec<StoredProgram>,
}

/// A candidate on its way from a sampler to an evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSubmission {
    pub island: usize,
    /// Raw text; unparseable text is scored catastrophic.
    pub source: String,
    pub parent_hashes: Vec<String>,
    pub generation: u32,
}

/// Body of `POST /v1/register`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub island: usize,
    pub program: ProgramRecord,
    pub record: ScoreRecord,
}

/// Body of `POST /v1/skip`: a round that produced no candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    pub island: Option<usize>,
    pub reason: String,
}

/// Evaluator reply: the score and what the database did with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub content_hash: String,
    pub record: ScoreRecord,
    pub outcome: RegisterOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetResponse {
    pub entries: Vec<ResetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsPayload {
    pub protocol_hash: String,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthPayload {
    pub status: String,
    pub protocol_hash: String,
}
