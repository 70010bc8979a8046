//! The database master: one writer behind a mutex, served over HTTP.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use ahd_core::evolution::{Database, EvolutionError};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use crate::wire::{
    HealthPayload, MessageKind, ResetResponse, SampleRequest, SampleResponse, ScoreReport, SkipReport, StatsPayload,
    WireEnvelope, WireError,
};
use crate::ServiceHandle;

#[derive(Debug)]
pub struct DbState {
    db: Mutex<Database>,
    resetting: AtomicBool,
}

impl DbState {
    pub fn new(db: Database) -> Arc<Self> {
        Arc::new(DbState { db: Mutex::new(db), resetting: AtomicBool::new(false) })
    }

    pub fn lock(&self) -> MutexGuard<'_, Database> {
        self.db.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub msg: String,
}

impl ApiError {
    pub fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError { status, msg: msg.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.msg }))).into_response()
    }
}

impl From<WireError> for ApiError {
    fn from(e: WireError) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.to_string())
    }
}

impl From<EvolutionError> for ApiError {
    fn from(e: EvolutionError) -> Self {
        let status = match e {
            EvolutionError::UnknownIsland(_) | EvolutionError::EmptyIsland(_) => StatusCode::NOT_FOUND,
            EvolutionError::ProtocolMismatch { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult = Result<Json<WireEnvelope>, ApiError>;

fn busy(state: &DbState) -> Result<(), ApiError> {
    if state.resetting.load(Ordering::Acquire) {
        Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "genetic reset in progress"))
    } else {
        Ok(())
    }
}

async fn sample(State(s): State<Arc<DbState>>, Query(q): Query<SampleRequest>) -> ApiResult {
    busy(&s)?;
    let programs = s.lock().sample(q.island, q.count, q.seed)?;
    Ok(Json(WireEnvelope::new(MessageKind::SampleResponse, &SampleResponse { island: q.island, programs }, None)))
}

async fn register(State(s): State<Arc<DbState>>, body: Bytes) -> ApiResult {
    let env = WireEnvelope::decode(&body)?;
    let report: ScoreReport = env.open(MessageKind::ScoreReport)?;
    busy(&s)?;
    let key = report.program.content_hash.clone();
    let outcome = s.lock().register_record(report.island, report.program, report.record)?;
    Ok(Json(WireEnvelope::new(MessageKind::ScoreReport, &outcome, Some(key))))
}

async fn skip(State(s): State<Arc<DbState>>, body: Bytes) -> ApiResult {
    let env = WireEnvelope::decode(&body)?;
    let report: SkipReport = env.open(MessageKind::ScoreReport)?;
    busy(&s)?;
    s.lock().skip(report.island, &report.reason)?;
    Ok(Json(WireEnvelope::new(MessageKind::ScoreReport, &serde_json::json!({ "skipped": true }), None)))
}

async fn reset(State(s): State<Arc<DbState>>, body: Bytes) -> ApiResult {
    if !body.is_empty() {
        WireEnvelope::decode(&body)?.open::<serde_json::Value>(MessageKind::ResetCommand)?;
    }
    s.resetting.store(true, Ordering::Release);
    let result = s.lock().genetic_reset();
    s.resetting.store(false, Ordering::Release);
    let entries = result?;
    Ok(Json(WireEnvelope::new(MessageKind::ResetCommand, &ResetResponse { entries }, None)))
}

async fn stats(State(s): State<Arc<DbState>>) -> ApiResult {
    let db = s.lock();
    let payload = StatsPayload { protocol_hash: db.protocol_hash().to_string(), stats: db.stats() };
    Ok(Json(WireEnvelope::new(MessageKind::StatsResponse, &payload, None)))
}

async fn health(State(s): State<Arc<DbState>>) -> ApiResult {
    let protocol_hash = s.lock().protocol_hash().to_string();
    Ok(Json(WireEnvelope::new(MessageKind::StatsResponse, &HealthPayload { status: "ok".into(), protocol_hash }, None)))
}

pub fn router(state: Arc<DbState>) -> Router {
    Router::new()
        .route("/v1/sample", get(sample))
        .route("/v1/register", post(register))
        .route("/v1/skip", post(skip))
        .route("/v1/reset", post(reset))
        .route("/v1/stats", get(stats))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Serves `db` on `bind` (e.g. `127.0.0.1:0`).
pub async fn serve(bind: &str, db: Database) -> std::io::Result<(ServiceHandle, Arc<DbState>)> {
    let state = DbState::new(db);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let handle = ServiceHandle::spawn(listener, router(state.clone())).await?;
    Ok((handle, state))
}
