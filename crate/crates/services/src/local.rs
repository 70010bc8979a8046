//! Run drivers. `run_local` executes sampler, evaluator and database steps
//! in lockstep inside one process, so a mock run is a pure function of its
//! config. `run_distributed` drives the HTTP services.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use ahd_core::evolution::{read_events, BestProgram, Database, EventLog, Stats};
use ahd_core::scoring::Evaluator;
use ahd_core::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::client::{Backoff, DbClient, EvaluatorClient};
use crate::config::{unix_now, RunConfig, RunManifest};
use crate::evaluator::score_submission;
use crate::mutator::Mutator;
use crate::report::{trace, write_csv};
use crate::sampler::{sampler_loop, SamplerConfig, SamplerMetrics};
use crate::wire::CandidateSubmission;
use crate::{db, evaluator, ServiceError};

/// File names inside a run's output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub events: PathBuf,
    pub trace: PathBuf,
    pub best: PathBuf,
    pub snapshot: PathBuf,
    pub manifest: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        RunPaths {
            events: out_dir.join("events.jsonl"),
            trace: out_dir.join("trace.csv"),
            best: out_dir.join("best_program.ks"),
            snapshot: out_dir.join("snapshot.json"),
            manifest: out_dir.join("manifest.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub protocol_hash: String,
    pub stats: Stats,
    pub samplers: Vec<SamplerMetrics>,
}

impl RunSummary {
    pub fn best(&self) -> Option<&BestProgram> {
        self.stats.global_best.as_ref()
    }
}

/// Fresh database, or the state replayed from an existing log.
fn open_database(cfg: &RunConfig, protocol_hash: &str, paths: &RunPaths, resume: bool) -> Result<Database, ServiceError> {
    let mut db = if resume && paths.events.exists() {
        Database::replay(cfg.database_config(), protocol_hash, &read_events(&paths.events)?)?
    } else {
        if paths.events.exists() {
            std::fs::remove_file(&paths.events)?;
        }
        Database::new(cfg.database_config(), protocol_hash)?
    };
    db.attach_log(EventLog::open(&paths.events)?);
    Ok(db)
}

/// Opens (or replays) the run database and plants the seed program.
pub fn prepare_database(cfg: &RunConfig, evaluator: &Evaluator, paths: &RunPaths, resume: bool) -> Result<Database, ServiceError> {
    let mut db = open_database(cfg, evaluator.protocol_hash(), paths, resume)?;
    plant_seed(cfg, evaluator, &mut db)?;
    Ok(db)
}

/// Registers the seed program as candidate 1 on island 0 and copies it to
/// the other islands.
fn plant_seed(cfg: &RunConfig, evaluator: &Evaluator, db: &mut Database) -> Result<(), ServiceError> {
    if db.counters().generated > 0 {
        return Ok(());
    }
    let seed = cfg.seed_program()?;
    let sub = CandidateSubmission { island: 0, source: seed.source().to_string(), parent_hashes: Vec::new(), generation: 0 };
    let rep = score_submission(evaluator, &sub);
    if rep.record.is_catastrophic() {
        return Err(ServiceError::Config(format!("seed program is catastrophic: {}", rep.record.fault.unwrap_or_default())));
    }
    db.register_record(0, rep.program, rep.record)?;
    db.seed_empty_islands()?;
    Ok(())
}

pub fn write_outputs(cfg: &RunConfig, db: &Database, paths: &RunPaths, manifest: &mut RunManifest) -> Result<(), ServiceError> {
    db.save_snapshot(&paths.snapshot)?;
    if let Some(best) = db.stats().global_best {
        std::fs::write(&paths.best, format!("{}\n", best.source))?;
    }
    write_csv(&paths.trace, &cfg.csv_comment(), &trace(&read_events(&paths.events)?))?;
    manifest.finished_at = Some(unix_now());
    manifest.write(&paths.manifest)
}

/// Runs candidates until `generated == cfg.budget` or `stop` is set. With
/// `resume`, continues from the event log in `out_dir`.
pub fn run_local(
    cfg: &RunConfig,
    out_dir: &Path,
    resume: bool,
    stop: &AtomicBool,
    mut progress: impl FnMut(u64, &Database),
) -> Result<RunSummary, ServiceError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let paths = RunPaths::new(out_dir);
    let mut manifest = RunManifest::new("evolve", cfg, out_dir)?;
    let evaluator = Evaluator::new(cfg.build_link()?, cfg.protocol.clone())?;
    manifest.protocol_hash = Some(evaluator.protocol_hash().to_string());
    let mutator = Mutator::from_config(&cfg.mutator)?;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let mut db = prepare_database(cfg, &evaluator, &paths, resume)?;
    let islands = db.islands().len() as u64;
    let k = cfg.mutator.examples_per_prompt;

    while db.counters().generated < cfg.budget && !stop.load(std::sync::atomic::Ordering::Relaxed) {
        let i = db.counters().generated;
        let s = derive_seed(cfg.seed, i);
        let island = (derive_seed(s, 0) % islands) as usize;
        let samples = db.sample(island, k, derive_seed(s, 1))?;
        match rt.block_on(mutator.propose(&samples, derive_seed(s, 2))) {
            Ok(c) => {
                let sub = CandidateSubmission { island, source: c.source, parent_hashes: c.parent_hashes, generation: c.generation };
                let rep = score_submission(&evaluator, &sub);
                db.register_record(island, rep.program, rep.record)?;
            }
            Err(e) => {
                log::warn!("candidate {}: {e}", i + 1);
                db.skip(Some(island), &e.to_string())?;
            }
        }
        progress(i + 1, &db);
    }
    write_outputs(cfg, &db, &paths, &mut manifest)?;
    Ok(RunSummary {
        run_id: cfg.run_id(),
        protocol_hash: evaluator.protocol_hash().to_string(),
        stats: db.stats(),
        samplers: Vec::new(),
    })
}

/// Drives samplers against HTTP services until the budget is reached.
/// Services without a configured address are started in-process on
/// loopback ports; an in-process database logs to `out_dir`.
pub async fn run_distributed(cfg: &RunConfig, out_dir: &Path, resume: bool, stop: Arc<AtomicBool>) -> Result<RunSummary, ServiceError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let paths = RunPaths::new(out_dir);
    let mut manifest = RunManifest::new("evolve", cfg, out_dir)?;
    let evaluator = {
        let link = cfg.build_link()?;
        let protocol = cfg.protocol.clone();
        Arc::new(tokio::task::spawn_blocking(move || Evaluator::new(link, protocol)).await.map_err(std::io::Error::other)??)
    };
    manifest.protocol_hash = Some(evaluator.protocol_hash().to_string());
    let dc = &cfg.distributed;

    let mut owned = Vec::new();
    let mut local_db = None;
    let db_url = match &dc.db_addr {
        Some(a) => a.clone(),
        None => {
            let database = prepare_database(cfg, &evaluator, &paths, resume)?;
            let (h, state) = db::serve("127.0.0.1:0", database).await?;
            let url = h.url();
            owned.push(h);
            local_db = Some(state);
            url
        }
    };
    let db_client = DbClient::new(&db_url);
    let remote_hash = db_client.health().await?.protocol_hash;
    if remote_hash != evaluator.protocol_hash() {
        return Err(ServiceError::Config(format!("database protocol {remote_hash} differs from local {}", evaluator.protocol_hash())));
    }
    let mut eval_urls = dc.evaluator_addrs.clone();
    if eval_urls.is_empty() {
        for _ in 0..dc.evaluators.max(1) {
            let h = evaluator::serve("127.0.0.1:0", evaluator.clone(), db_client.clone()).await?;
            eval_urls.push(h.url());
            owned.push(h);
        }
    }
    let evals: Arc<Vec<EvaluatorClient>> = Arc::new(eval_urls.iter().map(|u| EvaluatorClient::new(u)).collect());
    let mutator = Arc::new(Mutator::from_config(&cfg.mutator)?);
    let mut tasks = Vec::new();
    for id in 0..dc.samplers.max(1) as u64 {
        let sc = SamplerConfig {
            id,
            seed: cfg.seed,
            islands: cfg.database.islands,
            examples_per_prompt: cfg.mutator.examples_per_prompt,
            budget: cfg.budget,
            max_rounds: None,
            backoff: Backoff::default(),
        };
        let (mutator, db, evals, stop) = (mutator.clone(), db_client.clone(), evals.clone(), stop.clone());
        tasks.push(tokio::spawn(async move { sampler_loop(&sc, &mutator, &db, &evals, &stop).await }));
    }
    let mut samplers = Vec::new();
    for t in tasks {
        samplers.push(t.await.map_err(std::io::Error::other)?);
    }
    let stats = db_client.stats().await?.stats;
    for h in owned {
        h.shutdown().await;
    }
    if let Some(state) = local_db {
        write_outputs(cfg, &state.lock(), &paths, &mut manifest)?;
    } else {
        manifest.finished_at = Some(unix_now());
        manifest.write(&paths.manifest)?;
    }
    Ok(RunSummary { run_id: cfg.run_id(), protocol_hash: evaluator.protocol_hash().to_string(), stats, samplers })
}
