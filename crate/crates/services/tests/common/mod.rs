#![allow(dead_code)]

use std::sync::Arc;

use ahd_core::evolution::{Database, DatabaseConfig};
use ahd_core::kernels::KernelParams;
use ahd_core::kernelscript::seeds;
use ahd_core::scoring::{EvalProtocol, Evaluator};
use ahd_services::evaluator::score_submission;
use ahd_services::wire::{CandidateSubmission, ScoreReport};
use ahd_services::RunConfig;

/// A cheap protocol: 6 TBs at the default boundary context.
pub fn small_config() -> RunConfig {
    RunConfig {
        protocol: EvalProtocol { n_tbs: 6, ..Default::default() },
        database: DatabaseConfig { islands: 2, reset_every: 0, ..Default::default() },
        budget: 12,
        ..Default::default()
    }
}

pub fn evaluator(cfg: &RunConfig) -> Arc<Evaluator> {
    Arc::new(Evaluator::new(cfg.build_link().unwrap(), cfg.protocol.clone()).unwrap())
}

pub fn database(cfg: &RunConfig, ev: &Evaluator) -> Database {
    Database::new(cfg.database_config(), ev.protocol_hash()).unwrap()
}

pub fn submission(source: &str, island: usize) -> CandidateSubmission {
    CandidateSubmission { island, source: source.to_string(), parent_hashes: Vec::new(), generation: 0 }
}

pub fn report(ev: &Evaluator, source: &str, island: usize) -> ScoreReport {
    score_submission(ev, &submission(source, island))
}

pub fn seed_sources() -> Vec<String> {
    let p = KernelParams::default();
    vec![seeds::boxplus(&p), seeds::min_sum(), seeds::offset_min_sum(0.5), seeds::offset_min_sum(3.0), seeds::discovered(&p)]
}
