//! Evaluator worker: scores submitted candidates on the fixed protocol and
//! registers the result with the database.

use std::sync::Arc;

use ahd_core::kernelscript::{content_hash, parse, ProgramRecord};
use ahd_core::scoring::{Evaluator, ScoreRecord};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};

use crate::client::DbClient;
use crate::db::ApiError;
use crate::wire::{CandidateSubmission, EvaluationResult, HealthPayload, MessageKind, ScoreReport, WireEnvelope};
use crate::{ServiceError, ServiceHandle};

/// Storage form of a candidate. Unparseable text keeps its raw bytes and is
/// hashed as-is.
pub fn candidate_record(source: &str, parent_hashes: Vec<String>, generation: u32) -> ProgramRecord {
    match parse(source) {
        Ok(p) => p.with_lineage(parent_hashes, generation).to_record(),
        Err(_) => ProgramRecord { source: source.to_string(), content_hash: content_hash(source), parent_hashes, generation },
    }
}

/// Scores one submission; blocking.
pub fn score_submission(evaluator: &Evaluator, sub: &CandidateSubmission) -> ScoreReport {
    let record: ScoreRecord = evaluator.score_source(&sub.source);
    ScoreReport { island: sub.island, program: candidate_record(&sub.source, sub.parent_hashes.clone(), sub.generation), record }
}

#[derive(Debug)]
pub struct EvaluatorState {
    pub evaluator: Arc<Evaluator>,
    pub db: DbClient,
}

async fn evaluate(State(s): State<Arc<EvaluatorState>>, body: Bytes) -> Result<Json<WireEnvelope>, ApiError> {
    let sub: CandidateSubmission = WireEnvelope::decode(&body)?.open(MessageKind::CandidateSubmission)?;
    let ev = s.evaluator.clone();
    let report = tokio::task::spawn_blocking(move || score_submission(&ev, &sub))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let outcome = s.db.register(&report).await.map_err(|e| match e {
        ServiceError::Status { status, body, .. } => {
            ApiError::new(StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_GATEWAY), body)
        }
        other => ApiError::new(StatusCode::BAD_GATEWAY, other.to_string()),
    })?;
    let hash = report.program.content_hash.clone();
    let result = EvaluationResult { content_hash: hash.clone(), record: report.record, outcome };
    Ok(Json(WireEnvelope::new(MessageKind::ScoreReport, &result, Some(hash))))
}

async fn health(State(s): State<Arc<EvaluatorState>>) -> Json<WireEnvelope> {
    let payload = HealthPayload { status: "ok".into(), protocol_hash: s.evaluator.protocol_hash().to_string() };
    Json(WireEnvelope::new(MessageKind::StatsResponse, &payload, None))
}

pub fn router(state: Arc<EvaluatorState>) -> Router {
    Router::new().route("/v1/evaluate", post(evaluate)).route("/v1/health", get(health)).with_state(state)
}

pub async fn serve(bind: &str, evaluator: Arc<Evaluator>, db: DbClient) -> std::io::Result<ServiceHandle> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    ServiceHandle::spawn(listener, router(Arc::new(EvaluatorState { evaluator, db }))).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unparseable_candidates_keep_their_text() {
        let r = candidate_record("the answer is L", vec!["p".into()], 3);
        assert_eq!(r.source, "the answer is L");
        assert_eq!(r.content_hash, content_hash("the answer is L"));
        let ok = candidate_record("m  =  abs( L )\nreturn m", vec![], 1);
        assert_eq!(ok.source, "m = abs(L)\nreturn m");
        assert_eq!(ok.generation, 1);
    }
}
