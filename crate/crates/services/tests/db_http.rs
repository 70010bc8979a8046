mod common;

use ahd_core::evolution::RegisterStatus;
use ahd_services::client::{Backoff, DbClient};
use ahd_services::db;
use ahd_services::wire::{MessageKind, WireEnvelope};
use ahd_services::ServiceError;
use common::*;

fn no_retry(url: &str) -> DbClient {
    DbClient::with_backoff(url, Backoff { max_retries: Some(0), ..Default::default() })
}

#[tokio::test]
async fn register_sample_stats_round_trip() {
    let cfg = small_config();
    let ev = evaluator(&cfg);
    let (h, _) = db::serve("127.0.0.1:0", database(&cfg, &ev)).await.unwrap();
    let c = no_retry(&h.url());
    assert_eq!(c.health().await.unwrap().protocol_hash, ev.protocol_hash());

    let srcs = seed_sources();
    let first = report(&ev, &srcs[0], 0);
    assert!(c.register(&first).await.unwrap().accepted);
    let got = c.sample(0, 1, 9).await.unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].program, first.program);

    let dup = c.register(&first).await.unwrap();
    assert!(!dup.accepted);
    assert_eq!(dup.status, RegisterStatus::Duplicate);

    assert!(c.register(&report(&ev, &srcs[1], 1)).await.unwrap().accepted);
    assert!(c.register(&report(&ev, &srcs[2], 1)).await.unwrap().accepted);
    let stats = c.stats().await.unwrap().stats;
    assert_eq!(stats.stored_programs, 3);
    assert_eq!(stats.counters.accepted, 3);
    assert_eq!(stats.counters.generated, 4);
    h.shutdown().await;
}

fn status<T: std::fmt::Debug>(r: Result<T, ServiceError>) -> u16 {
    match r {
        Err(ServiceError::Status { status, .. }) => status,
        other => panic!("expected an HTTP error, got {other:?}"),
    }
}

#[tokio::test]
async fn error_statuses() {
    let cfg = small_config();
    let ev = evaluator(&cfg);
    let (h, _) = db::serve("127.0.0.1:0", database(&cfg, &ev)).await.unwrap();
    let c = no_retry(&h.url());
    assert_eq!(status(c.sample(7, 1, 0).await), 404);
    assert_eq!(status(c.sample(0, 1, 0).await), 404);
    let mut wrong = report(&ev, "return L", 0);
    wrong.record.protocol_hash = "elsewhere".into();
    assert_eq!(status(c.register(&wrong).await), 409);
    assert_eq!(status(c.register(&report(&ev, "return L", 9)).await), 404);

    let http = reqwest::Client::new();
    let post = |body: &'static str| http.post(format!("{}/v1/register", h.url())).body(body).send();
    assert_eq!(post("{").await.unwrap().status().as_u16(), 400);
    assert_eq!(post(r#"{"protocol_version":"1","kind":"gossip","payload":{}}"#).await.unwrap().status().as_u16(), 400);
    assert_eq!(post(r#"{"protocol_version":"2","kind":"score_report","payload":{}}"#).await.unwrap().status().as_u16(), 400);
    let wrong_kind = serde_json::to_string(&WireEnvelope::new(MessageKind::StatsResponse, &serde_json::json!({}), None)).unwrap();
    let r = http.post(format!("{}/v1/register", h.url())).body(wrong_kind).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 400);
    h.shutdown().await;
}

#[tokio::test]
async fn manual_reset_over_http() {
    let cfg = small_config();
    let ev = evaluator(&cfg);
    let (h, state) = db::serve("127.0.0.1:0", database(&cfg, &ev)).await.unwrap();
    let c = no_retry(&h.url());
    let srcs = seed_sources();
    c.register(&report(&ev, &srcs[0], 0)).await.unwrap();
    c.register(&report(&ev, &srcs[1], 1)).await.unwrap();
    let entries = c.reset().await.unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(state.lock().counters().resets, 1);
    let stats = c.stats().await.unwrap().stats;
    assert!(stats.islands.iter().all(|i| i.program_count == 1));
    h.shutdown().await;
}
