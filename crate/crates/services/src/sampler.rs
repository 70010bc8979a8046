//! Sampler worker: sample, mutate, submit, repeat.

use std::sync::atomic::{AtomicBool, Ordering};

use ahd_core::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::client::{Backoff, DbClient, EvaluatorClient};
use crate::mutator::Mutator;
use crate::wire::CandidateSubmission;
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub id: u64,
    pub seed: u64,
    pub islands: usize,
    pub examples_per_prompt: usize,
    /// Stop once the database has seen this many candidates.
    pub budget: u64,
    pub max_rounds: Option<u64>,
    pub backoff: Backoff,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerMetrics {
    pub rounds: u64,
    pub submitted: u64,
    pub accepted: u64,
    pub llm_failures: u64,
    pub transport_errors: u64,
}

/// Samples from `island`, falling over to the next islands while they are
/// empty (a fresh remote database has programs on one island only).
async fn sample_any(db: &DbClient, island: usize, islands: usize, k: usize, seed: u64) -> Result<Vec<ahd_core::evolution::StoredProgram>, ServiceError> {
    let mut last = None;
    for j in 0..islands.max(1) {
        match db.sample((island + j) % islands.max(1), k, seed).await {
            Ok(v) => return Ok(v),
            Err(ServiceError::Status { status: 404, endpoint, body }) => last = Some(ServiceError::Status { status: 404, endpoint, body }),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| ServiceError::Config("no islands".into())))
}

/// Runs rounds until the budget is reached, `stop` is set or `max_rounds`
/// is exhausted. Single failures are logged and retried, never fatal.
/// Round `r` of sampler `id` draws every random choice from
/// `derive_seed(derive_seed(seed, id), r)`.
pub async fn sampler_loop(
    cfg: &SamplerConfig,
    mutator: &Mutator,
    db: &DbClient,
    evaluators: &[EvaluatorClient],
    stop: &AtomicBool,
) -> SamplerMetrics {
    let mut m = SamplerMetrics::default();
    let mut failures = 0u32;
    let base = derive_seed(cfg.seed, cfg.id);
    let islands = cfg.islands.max(1);
    loop {
        if stop.load(Ordering::Relaxed) || cfg.max_rounds.is_some_and(|r| m.rounds >= r) || evaluators.is_empty() {
            break;
        }
        if failures > 0 {
            tokio::time::sleep(cfg.backoff.delay(failures - 1)).await;
        }
        match db.stats().await {
            Ok(s) if s.stats.counters.generated >= cfg.budget => break,
            Ok(_) => {}
            Err(e) => {
                log::warn!("sampler {}: stats: {e}", cfg.id);
                m.transport_errors += 1;
                failures += 1;
                continue;
            }
        }
        let s = derive_seed(base, m.rounds);
        let island = (derive_seed(s, 0) % islands as u64) as usize;
        let samples = match sample_any(db, island, islands, cfg.examples_per_prompt, derive_seed(s, 1)).await {
            Ok(v) => v,
            Err(e) => {
                log::warn!("sampler {}: sample: {e}", cfg.id);
                m.transport_errors += 1;
                failures += 1;
                continue;
            }
        };
        m.rounds += 1;
        let cand = match mutator.propose(&samples, derive_seed(s, 2)).await {
            Ok(c) => c,
            Err(e) => {
                log::warn!("sampler {}: mutator: {e}", cfg.id);
                m.llm_failures += 1;
                if let Err(e) = db.skip(Some(island), &e.to_string()).await {
                    log::warn!("sampler {}: skip: {e}", cfg.id);
                    m.transport_errors += 1;
                }
                continue;
            }
        };
        let sub = CandidateSubmission { island, source: cand.source, parent_hashes: cand.parent_hashes, generation: cand.generation };
        let ev = &evaluators[(m.rounds as usize - 1) % evaluators.len()];
        match ev.evaluate(&sub).await {
            Ok(r) => {
                failures = 0;
                m.submitted += 1;
                m.accepted += u64::from(r.outcome.accepted);
            }
            Err(e) => {
                log::warn!("sampler {}: evaluate: {e}", cfg.id);
                m.transport_errors += 1;
                failures += 1;
            }
        }
    }
    m
}
