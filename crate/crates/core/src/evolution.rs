//! Island-model program database with score clusters, temperature sampling,
//! genetic resets and an append-only event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernelscript::{KernelProgram, ProgramRecord};
use crate::scoring::{cluster_key, ScoreRecord};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("unknown island {0}")]
    UnknownIsland(usize),
    #[error("island {0} is empty")]
    EmptyIsland(usize),
    #[error("protocol mismatch: database uses {expected}, record has {got}")]
    ProtocolMismatch { expected: String, got: String },
    #[error("invalid database config: {0}")]
    InvalidConfig(String),
    #[error("corrupt event log at line {line}: {msg}")]
    CorruptLog { line: usize, msg: String },
    #[error("replay diverged at event {index}: {msg}")]
    ReplayDiverged { index: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatabaseConfig {
    pub islands: usize,
    /// Initial sampling temperature in score units.
    pub t0: f64,
    /// Temperature period in island programs.
    pub period: usize,
    /// Length scale of the within-cluster preference for short sources.
    pub length_lambda: f64,
    /// Registrations between automatic resets; 0 disables them.
    pub reset_every: usize,
    pub reset_fraction: f64,
    /// Seed of the reset donor choices.
    pub seed: u64,
}

impl Default for DatabaseConfig {
    fn default() -> Self {
        DatabaseConfig {
            islands: 4,
            t0: 1.0,
            period: 1000,
            length_lambda: 200.0,
            reset_every: 5000,
            reset_fraction: 0.5,
            seed: crate::seed::DEFAULT_SEED,
        }
    }
}

impl DatabaseConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::InvalidConfig(m.to_string()));
        if self.islands == 0 {
            return bad("at least one island is required");
        }
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return bad("t0 must be positive");
        }
        if self.period == 0 {
            return bad("period must be positive");
        }
        if !(self.length_lambda > 0.0) {
            return bad("length_lambda must be positive");
        }
        if !(0.0..=1.0).contains(&self.reset_fraction) {
            return bad("reset_fraction must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredProgram {
    pub program: ProgramRecord,
    pub record: ScoreRecord,
}

impl StoredProgram {
    pub fn score(&self) -> f64 {
        self.record.score
    }

    pub fn hash(&self) -> &str {
        &self.program.content_hash
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub score: f64,
    pub programs: Vec<StoredProgram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub id: usize,
    /// Keyed by [`cluster_key`] of the score.
    pub clusters: BTreeMap<i64, Cluster>,
    pub program_count: usize,
    /// Number of resets this island has gone through.
    pub epoch: u64,
}

impl Island {
    fn new(id: usize) -> Self {
        Island { id, clusters: BTreeMap::new(), program_count: 0, epoch: 0 }
    }

    pub fn best_score(&self) -> Option<f64> {
        self.clusters.values().next_back().map(|c| c.score)
    }

    /// Highest score, then shortest source, then smallest hash.
    pub fn best_program(&self) -> Option<&StoredProgram> {
        self.clusters.values().next_back().and_then(|c| {
            c.programs.iter().min_by(|a, b| {
                a.program.source.len().cmp(&b.program.source.len()).then_with(|| a.hash().cmp(b.hash()))
            })
        })
    }

    fn insert(&mut self, p: StoredProgram) {
        let key = p.record.cluster_key();
        let score = p.score();
        self.clusters.entry(key).or_insert_with(|| Cluster { score, programs: Vec::new() }).programs.push(p);
        self.program_count += 1;
    }

    fn clear(&mut self) -> usize {
        let n = self.program_count;
        self.clusters.clear();
        self.program_count = 0;
        self.epoch += 1;
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    /// Every register call.
    pub generated: u64,
    pub accepted: u64,
    pub catastrophic: u64,
    /// Duplicates plus rounds that produced no candidate.
    pub skipped: u64,
    pub duplicates: u64,
    pub resets: u64,
    /// Programs dropped by resets.
    pub removed: u64,
    /// Programs copied into islands by resets and initial seeding.
    pub seeded: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterStatus {
    Accepted,
    Duplicate,
    Catastrophic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetEntry {
    pub island: usize,
    pub donor: usize,
    pub seed_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterOutcome {
    pub accepted: bool,
    pub status: RegisterStatus,
    /// Present when this registration triggered the periodic reset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset: Option<Vec<ResetEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetTrigger {
    Auto,
    Manual,
    InitialSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Register {
        island: usize,
        program: ProgramRecord,
        record: ScoreRecord,
        status: RegisterStatus,
    },
    Skipped {
        #[serde(default)]
        island: Option<usize>,
        reason: String,
    },
    Reset {
        trigger: ResetTrigger,
        entries: Vec<ResetEntry>,
    },
}

/// Append-only JSON-lines writer.
#[derive(Debug)]
pub struct EventLog {
    file: File,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self, EvolutionError> {
        Ok(EventLog { file: OpenOptions::new().create(true).append(true).open(path)? })
    }

    pub fn append(&mut self, event: &Event) -> Result<(), EvolutionError> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Reads every event; blank lines are ignored.
pub fn read_events(path: &Path) -> Result<Vec<Event>, EvolutionError> {
    parse_events(BufReader::new(File::open(path)?))
}

pub fn parse_events<R: BufRead>(reader: R) -> Result<Vec<Event>, EvolutionError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvolutionError::CorruptLog { line: i + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| EvolutionError::CorruptLog { line: i + 1, msg: e.to_string() })?;
        out.push(ev);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandStats {
    pub id: usize,
    pub program_count: usize,
    pub best_score: Option<f64>,
    pub cluster_count: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestProgram {
    pub island: usize,
    pub hash: String,
    pub source: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub islands: Vec<IslandStats>,
    pub global_best: Option<BestProgram>,
    pub counters: Counters,
    pub stored_programs: usize,
}

/// Serializable database state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub config: DatabaseConfig,
    pub protocol_hash: String,
    pub islands: Vec<Island>,
    pub seen: BTreeSet<String>,
    pub counters: Counters,
}

#[derive(Debug)]
pub struct Database {
    state: Snapshot,
    log: Option<EventLog>,
}

impl Database {
    pub fn new(config: DatabaseConfig, protocol_hash: impl Into<String>) -> Result<Self, EvolutionError> {
        config.validate()?;
        let islands = (0..config.islands).map(Island::new).collect();
        Ok(Database {
            state: Snapshot {
                config,
                protocol_hash: protocol_hash.into(),
                islands,
                seen: BTreeSet::new(),
                counters: Counters::default(),
            },
            log: None,
        })
    }

    pub fn from_snapshot(snapshot: Snapshot) -> Result<Self, EvolutionError> {
        snapshot.config.validate()?;
        Ok(Database { state: snapshot, log: None })
    }

    /// Rebuilds the state by re-applying `events`, checking that every
    /// recorded reset is reproduced exactly.
    pub fn replay(config: DatabaseConfig, protocol_hash: &str, events: &[Event]) -> Result<Self, EvolutionError> {
        let mut db = Database::new(config, protocol_hash)?;
        let mut pending_auto: Option<Vec<ResetEntry>> = None;
        for (index, ev) in events.iter().enumerate() {
            let diverged = |msg: String| EvolutionError::ReplayDiverged { index, msg };
            match ev {
                Event::Register { island, program, record, status } => {
                    if let Some(p) = pending_auto.take() {
                        return Err(diverged(format!("expected auto reset {p:?} before this registration")));
                    }
                    let out = db.register_record(*island, program.clone(), record.clone())?;
                    if out.status != *status {
                        return Err(diverged(format!("status {:?}, log has {status:?}", out.status)));
                    }
                    pending_auto = out.reset;
                }
                Event::Skipped { island, reason } => {
                    db.skip(*island, reason)?;
                }
                Event::Reset { trigger, entries } => {
                    let produced = match trigger {
                        ResetTrigger::Auto => pending_auto.take().ok_or_else(|| diverged("unexpected auto reset".into()))?,
                        ResetTrigger::Manual => db.genetic_reset()?,
                        ResetTrigger::InitialSeed => db.seed_empty_islands()?,
                    };
                    if &produced != entries {
                        return Err(diverged(format!("reset produced {produced:?}, log has {entries:?}")));
                    }
                }
            }
        }
        if let Some(p) = pending_auto {
            // The process stopped between a registration and its reset line.
            db.emit(&Event::Reset { trigger: ResetTrigger::Auto, entries: p })?;
        }
        Ok(db)
    }

    /// Appends all future events to `log`.
    pub fn attach_log(&mut self, log: EventLog) {
        self.log = Some(log);
    }

    fn emit(&mut self, ev: &Event) -> Result<(), EvolutionError> {
        if let Some(log) = &mut self.log {
            log.append(ev)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &DatabaseConfig {
        &self.state.config
    }

    pub fn protocol_hash(&self) -> &str {
        &self.state.protocol_hash
    }

    pub fn counters(&self) -> Counters {
        self.state.counters
    }

    pub fn islands(&self) -> &[Island] {
        &self.state.islands
    }

    pub fn island(&self, id: usize) -> Result<&Island, EvolutionError> {
        self.state.islands.get(id).ok_or(EvolutionError::UnknownIsland(id))
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.state
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.state.seen.contains(hash)
    }

    /// Stores `program` on `island` unless it is catastrophic or already
    /// known. Every call counts as one generated candidate.
    pub fn register(&mut self, island: usize, program: &KernelProgram, record: &ScoreRecord) -> Result<RegisterOutcome, EvolutionError> {
        self.register_record(island, program.to_record(), record.clone())
    }

    pub fn register_record(&mut self, island: usize, program: ProgramRecord, record: ScoreRecord) -> Result<RegisterOutcome, EvolutionError> {
        if island >= self.state.islands.len() {
            return Err(EvolutionError::UnknownIsland(island));
        }
        if record.protocol_hash != self.state.protocol_hash {
            return Err(EvolutionError::ProtocolMismatch {
                expected: self.state.protocol_hash.clone(),
                got: record.protocol_hash,
            });
        }
        let c = &mut self.state.counters;
        c.generated += 1;
        let status = if record.is_catastrophic() {
            c.catastrophic += 1;
            RegisterStatus::Catastrophic
        } else if self.state.seen.contains(&program.content_hash) {
            c.duplicates += 1;
            c.skipped += 1;
            RegisterStatus::Duplicate
        } else {
            c.accepted += 1;
            self.state.seen.insert(program.content_hash.clone());
            self.state.islands[island].insert(StoredProgram { program: program.clone(), record: record.clone() });
            RegisterStatus::Accepted
        };
        self.emit(&Event::Register { island, program, record, status })?;
        let every = self.state.config.reset_every as u64;
        let reset = if every > 0 && self.state.counters.generated % every == 0 {
            let entries = self.reset_inner();
            self.emit(&Event::Reset { trigger: ResetTrigger::Auto, entries: entries.clone() })?;
            Some(entries)
        } else {
            None
        };
        Ok(RegisterOutcome { accepted: status == RegisterStatus::Accepted, status, reset })
    }

    /// Records a round that produced no candidate (e.g. a failed LLM call).
    pub fn skip(&mut self, island: Option<usize>, reason: &str) -> Result<(), EvolutionError> {
        self.state.counters.generated += 1;
        self.state.counters.skipped += 1;
        self.emit(&Event::Skipped { island, reason: reason.to_string() })
    }

    fn temperature(&self, island: &Island) -> f64 {
        let p = self.state.config.period;
        self.state.config.t0 * (1.0 - (island.program_count % p) as f64 / p as f64)
    }

    /// Draws up to `k` distinct programs and returns them sorted by
    /// ascending score.
    pub fn sample(&self, island: usize, k: usize, seed: u64) -> Result<Vec<StoredProgram>, EvolutionError> {
        let isl = self.island(island)?;
        if isl.program_count == 0 {
            return Err(EvolutionError::EmptyIsland(island));
        }
        let t = self.temperature(isl);
        let lambda = self.state.config.length_lambda;
        let mut rng = crate::seed::rng(seed);
        let clusters: Vec<&Cluster> = isl.clusters.values().collect();
        let mut taken: Vec<Vec<bool>> = clusters.iter().map(|c| vec![false; c.programs.len()]).collect();
        let mut out = Vec::new();
        while out.len() < k {
            let open: Vec<usize> = (0..clusters.len()).filter(|&i| taken[i].iter().any(|t| !t)).collect();
            if open.is_empty() {
                break;
            }
            let max = open.iter().map(|&i| clusters[i].score).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = open.iter().map(|&i| ((clusters[i].score - max) / t).exp()).collect();
            let ci = open[pick(&weights, &mut rng)];
            let members: Vec<usize> = (0..clusters[ci].programs.len()).filter(|&j| !taken[ci][j]).collect();
            let min_len = members.iter().map(|&j| clusters[ci].programs[j].program.source.len()).min().unwrap_or(0);
            let weights: Vec<f64> = members
                .iter()
                .map(|&j| (-((clusters[ci].programs[j].program.source.len() - min_len) as f64) / lambda).exp())
                .collect();
            let pj = members[pick(&weights, &mut rng)];
            taken[ci][pj] = true;
            out.push(clusters[ci].programs[pj].clone());
        }
        out.sort_by(|a, b| a.score().total_cmp(&b.score()).then_with(|| a.hash().cmp(b.hash())));
        Ok(out)
    }

    /// Index of the cluster picked by one temperature-weighted draw; exposed
    /// for distribution tests.
    pub fn sample_cluster_key(&self, island: usize, seed: u64) -> Result<i64, EvolutionError> {
        let isl = self.island(island)?;
        if isl.program_count == 0 {
            return Err(EvolutionError::EmptyIsland(island));
        }
        let t = self.temperature(isl);
        let keys: Vec<i64> = isl.clusters.keys().copied().collect();
        let max = isl.best_score().unwrap_or(0.0);
        let weights: Vec<f64> = isl.clusters.values().map(|c| ((c.score - max) / t).exp()).collect();
        Ok(keys[pick(&weights, &mut crate::seed::rng(seed))])
    }

    /// Empties the weakest islands and seeds each with the best program of
    /// a uniformly chosen surviving island.
    pub fn genetic_reset(&mut self) -> Result<Vec<ResetEntry>, EvolutionError> {
        let entries = self.reset_inner();
        self.emit(&Event::Reset { trigger: ResetTrigger::Manual, entries: entries.clone() })?;
        Ok(entries)
    }

    fn reset_inner(&mut self) -> Vec<ResetEntry> {
        let n = self.state.islands.len();
        let mut entries = Vec::new();
        if n < 2 {
            return entries;
        }
        let resets = ((self.state.config.reset_fraction * n as f64).floor() as usize).min(n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        // Best first; ties keep the lower island id ahead.
        order.sort_by(|&a, &b| {
            let sa = self.state.islands[a].best_score().unwrap_or(f64::NEG_INFINITY);
            let sb = self.state.islands[b].best_score().unwrap_or(f64::NEG_INFINITY);
            sb.total_cmp(&sa).then(a.cmp(&b))
        });
        let (survivors, losers) = order.split_at(n - resets);
        let mut rng = crate::seed::rng(derive_seed(self.state.config.seed, self.state.counters.resets));
        self.state.counters.resets += 1;
        let mut losers = losers.to_vec();
        losers.sort_unstable();
        for island in losers {
            let donor = survivors[rng.random_range(0..survivors.len())];
            let removed = self.state.islands[island].clear();
            self.state.counters.removed += removed as u64;
            if let Some(best) = self.state.islands[donor].best_program().cloned() {
                entries.push(ResetEntry { island, donor, seed_hash: best.hash().to_string() });
                self.state.islands[island].insert(best);
                self.state.counters.seeded += 1;
            }
        }
        entries
    }

    /// Copies the global best program into every empty island.
    pub fn seed_empty_islands(&mut self) -> Result<Vec<ResetEntry>, EvolutionError> {
        let mut entries = Vec::new();
        if let Some(best) = self.global_best_stored() {
            let (donor, best) = (best.0, best.1.clone());
            for isl in self.state.islands.iter_mut().filter(|i| i.program_count == 0) {
                isl.insert(best.clone());
                entries.push(ResetEntry { island: isl.id, donor, seed_hash: best.hash().to_string() });
                self.state.counters.seeded += 1;
            }
        }
        self.emit(&Event::Reset { trigger: ResetTrigger::InitialSeed, entries: entries.clone() })?;
        Ok(entries)
    }

    fn global_best_stored(&self) -> Option<(usize, &StoredProgram)> {
        let mut best: Option<(usize, &StoredProgram)> = None;
        for isl in &self.state.islands {
            if let Some(p) = isl.best_program() {
                let better = match best {
                    None => true,
                    Some((_, b)) => p.score() > b.score() || (p.score() == b.score() && p.program.source.len() < b.program.source.len()),
                };
                if better {
                    best = Some((isl.id, p));
                }
            }
        }
        best
    }

    pub fn stats(&self) -> Stats {
        Stats {
            islands: self
                .state
                .islands
                .iter()
                .map(|i| IslandStats {
                    id: i.id,
                    program_count: i.program_count,
                    best_score: i.best_score(),
                    cluster_count: i.clusters.len(),
                    epoch: i.epoch,
                })
                .collect(),
            global_best: self.global_best_stored().map(|(island, p)| BestProgram {
                island,
                hash: p.hash().to_string(),
                source: p.program.source.clone(),
                score: p.score(),
            }),
            counters: self.state.counters,
            stored_programs: self.state.islands.iter().map(|i| i.program_count).sum(),
        }
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), EvolutionError> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.state).expect("snapshot serializes"))?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, EvolutionError> {
        let bytes = std::fs::read(path)?;
        let snap: Snapshot =
            serde_json::from_slice(&bytes).map_err(|e| EvolutionError::CorruptLog { line: e.line(), msg: e.to_string() })?;
        Database::from_snapshot(snap)
    }
}

fn pick(weights: &[f64], rng: &mut impl Rng) -> usize {
    match WeightedIndex::new(weights) {
        Ok(w) => w.sample(rng),
        // All weights underflowed; fall back to the last (highest-score) entry.
        Err(_) => weights.len() - 1,
    }
}

/// Cluster key helper re-exported for callers that only hold a score.
pub fn key_of(score: f64) -> i64 {
    cluster_key(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelscript::parse;
    use crate::scoring::{EvalProtocol, PenaltyBreakdown};

    const H: &str = "proto";

    fn rec(iters: usize) -> ScoreRecord {
        ScoreRecord::new(PenaltyBreakdown { total_iterations: iters, ..Default::default() }, &EvalProtocol::default(), H)
    }

    fn prog(i: usize) -> KernelProgram {
        parse(&format!("m = L * {i}\nreturn m")).unwrap()
    }

    fn db(islands: usize) -> Database {
        Database::new(DatabaseConfig { islands, reset_every: 0, ..Default::default() }, H).unwrap()
    }

    #[test]
    fn register_examples() {
        let mut d = db(2);
        let out = d.register(0, &prog(1), &rec(50)).unwrap();
        assert!(out.accepted);
        assert_eq!(d.island(0).unwrap().clusters.len(), 1);
        assert_eq!(d.island(0).unwrap().best_score(), Some(-50.0));
        let again = d.register(1, &prog(1), &rec(50)).unwrap();
        assert!(!again.accepted);
        assert_eq!(again.status, RegisterStatus::Duplicate);
        assert_eq!(d.stats().stored_programs, 1);
        let cat = ScoreRecord::catastrophic(&EvalProtocol::default(), H, "x");
        let before = d.island(1).unwrap().clone();
        assert!(!d.register(1, &prog(2), &cat).unwrap().accepted);
        assert_eq!(d.island(1).unwrap(), &before);
        assert!(matches!(d.register(5, &prog(3), &rec(1)), Err(EvolutionError::UnknownIsland(5))));
        let other = ScoreRecord { protocol_hash: "other".into(), ..rec(1) };
        assert!(matches!(d.register(0, &prog(3), &other), Err(EvolutionError::ProtocolMismatch { .. })));
        let c = d.counters();
        assert_eq!(c.accepted + c.catastrophic + c.skipped, c.generated);
    }

    #[test]
    fn same_score_shares_a_cluster() {
        let mut d = db(1);
        d.register(0, &prog(1), &rec(10)).unwrap();
        d.register(0, &prog(2), &rec(10)).unwrap();
        d.register(0, &prog(3), &rec(12)).unwrap();
        let isl = d.island(0).unwrap();
        assert_eq!(isl.clusters.len(), 2);
        assert_eq!(isl.clusters[&key_of(-10.0)].programs.len(), 2);
        for (k, c) in &isl.clusters {
            assert!(c.programs.iter().all(|p| p.record.cluster_key() == *k));
        }
    }

    #[test]
    fn stats_examples() {
        let d = db(3);
        let s = d.stats();
        assert!(s.global_best.is_none());
        assert_eq!(s.stored_programs, 0);
        let mut d = db(3);
        d.register(0, &prog(1), &rec(50)).unwrap();
        d.register(2, &prog(2), &rec(30)).unwrap();
        let s = d.stats();
        assert_eq!(s.global_best.as_ref().unwrap().score, -30.0);
        assert_eq!(s.global_best.unwrap().island, 2);
        assert_eq!(s.stored_programs as u64, s.counters.accepted);
    }

    #[test]
    fn sampling_is_sorted_and_replayable() {
        let mut d = db(1);
        for i in 0..8 {
            d.register(0, &prog(i), &rec(10 + i % 3)).unwrap();
        }
        assert!(matches!(db(1).sample(0, 2, 1), Err(EvolutionError::EmptyIsland(0))));
        let a = d.sample(0, 4, 7).unwrap();
        assert_eq!(a, d.sample(0, 4, 7).unwrap());
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0].score() <= w[1].score()));
        let hashes: BTreeSet<&str> = a.iter().map(|p| p.hash()).collect();
        assert_eq!(hashes.len(), 4);
        assert_eq!(d.sample(0, 100, 7).unwrap().len(), 8);
    }

    #[test]
    fn softmax_prefers_far_better_cluster() {
        let mut d = db(1);
        d.register(0, &prog(1), &rec(100)).unwrap();
        d.register(0, &prog(2), &rec(10)).unwrap();
        for s in 0..200 {
            assert_eq!(d.sample_cluster_key(0, s).unwrap(), key_of(-10.0));
        }
        let mut one = db(1);
        one.register(0, &prog(1), &rec(100)).unwrap();
        assert_eq!(one.sample(0, 1, 3).unwrap()[0].hash(), prog(1).content_hash());
    }

    fn five_clusters(t0: f64) -> Database {
        let mut d = Database::new(DatabaseConfig { islands: 1, t0, reset_every: 0, ..Default::default() }, H).unwrap();
        for i in 0..5 {
            d.register(0, &prog(i), &rec(10 * (i + 1))).unwrap();
        }
        d
    }

    #[test]
    fn cold_temperature_is_greedy() {
        let d = five_clusters(1e-12);
        for s in 0..1000 {
            assert_eq!(d.sample_cluster_key(0, s).unwrap(), key_of(-10.0));
        }
    }

    #[test]
    fn hot_temperature_is_uniform() {
        let d = five_clusters(1e12);
        let keys: Vec<i64> = d.island(0).unwrap().clusters.keys().copied().collect();
        let mut counts = vec![0usize; keys.len()];
        let draws = 10_000;
        for s in 0..draws {
            let k = d.sample_cluster_key(0, derive_seed(99, s)).unwrap();
            counts[keys.iter().position(|&x| x == k).unwrap()] += 1;
        }
        let expect = draws as f64 / keys.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // Upper 1% point of chi-square with 4 degrees of freedom.
        assert!(chi2 < 13.277, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn temperature_shrinks_with_island_size() {
        let mut d = Database::new(DatabaseConfig { islands: 1, t0: 2.0, period: 4, reset_every: 0, ..Default::default() }, H).unwrap();
        let mut ts = Vec::new();
        for i in 0..5 {
            d.register(0, &prog(i), &rec(1)).unwrap();
            ts.push(d.temperature(d.island(0).unwrap()));
        }
        assert_eq!(ts, vec![1.5, 1.0, 0.5, 2.0, 1.5]);
    }

    proptest::proptest! {
        #[test]
        fn accounting_and_best_monotone(
            ops in proptest::collection::vec((0usize..4, 0usize..30, 0usize..60, proptest::bool::ANY), 1..120),
            every in 0usize..12,
        ) {
            let cfg = DatabaseConfig { islands: 4, reset_every: every, ..Default::default() };
            let mut d = Database::new(cfg, H).unwrap();
            let mut best = f64::NEG_INFINITY;
            for (island, p, it, cat) in ops {
                let r = if cat { ScoreRecord::catastrophic(&EvalProtocol::default(), H, "f") } else { rec(it) };
                d.register(island, &prog(p), &r).unwrap();
                let s = d.stats();
                let c = s.counters;
                proptest::prop_assert_eq!(c.accepted + c.catastrophic + c.skipped, c.generated);
                proptest::prop_assert_eq!(s.stored_programs as u64, c.accepted + c.seeded - c.removed);
                if let Some(b) = s.global_best {
                    proptest::prop_assert!(b.score >= best);
                    best = b.score;
                }
                for isl in d.islands() {
                    let mut hashes = BTreeSet::new();
                    for (k, cl) in &isl.clusters {
                        for p in &cl.programs {
                            proptest::prop_assert_eq!(p.record.cluster_key(), *k);
                            proptest::prop_assert!(hashes.insert(p.hash().to_string()));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reset_policy() {
        let mut d = db(4);
        for (i, it) in [(0, 10), (1, 40), (2, 20), (3, 30)] {
            d.register(i, &prog(i), &rec(it)).unwrap();
        }
        let entries = d.genetic_reset().unwrap();
        let reset: Vec<usize> = entries.iter().map(|e| e.island).collect();
        assert_eq!(reset, vec![1, 3]);
        for e in &entries {
            assert!(e.donor == 0 || e.donor == 2);
            let isl = d.island(e.island).unwrap();
            assert_eq!(isl.program_count, 1);
            assert_eq!(isl.best_score(), d.island(e.donor).unwrap().best_score());
            assert_eq!(isl.epoch, 1);
        }
        let s = d.stats();
        let c = s.counters;
        assert_eq!(s.stored_programs as u64, c.accepted - c.removed + c.seeded);
        assert_eq!(s.global_best.unwrap().score, -10.0);
    }

    #[test]
    fn reset_ties_break_by_island_id() {
        let mut d = db(4);
        for i in 0..4 {
            d.register(i, &prog(i), &rec(5)).unwrap();
        }
        let reset: Vec<usize> = d.genetic_reset().unwrap().iter().map(|e| e.island).collect();
        assert_eq!(reset, vec![2, 3]);
        let mut single = db(1);
        single.register(0, &prog(0), &rec(5)).unwrap();
        assert!(single.genetic_reset().unwrap().is_empty());
    }

    #[test]
    fn log_replay_reproduces_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let cfg = DatabaseConfig { islands: 3, reset_every: 7, ..Default::default() };
        let mut d = Database::new(cfg.clone(), H).unwrap();
        d.attach_log(EventLog::open(&path).unwrap());
        d.register(0, &prog(0), &rec(40)).unwrap();
        d.seed_empty_islands().unwrap();
        for i in 1..30 {
            d.register(i % 3, &prog(i % 20), &rec(10 + (i * 7) % 13)).unwrap();
            if i % 11 == 0 {
                d.skip(Some(0), "llm timeout").unwrap();
            }
        }
        d.genetic_reset().unwrap();
        let events = read_events(&path).unwrap();
        let back = Database::replay(cfg, H, &events).unwrap();
        assert_eq!(back.snapshot(), d.snapshot());
        let c = d.counters();
        assert_eq!(c.accepted + c.catastrophic + c.skipped, c.generated);
        assert!(c.resets >= 4);
        let snap = dir.path().join("snap.json");
        d.save_snapshot(&snap).unwrap();
        assert_eq!(Database::load_snapshot(&snap).unwrap().snapshot(), d.snapshot());
    }

    #[test]
    fn corrupt_log_reports_line() {
        let text = "\n{\"event\":\"skipped\",\"island\":null,\"reason\":\"x\"}\nnot json\n";
        match parse_events(text.as_bytes()) {
            Err(EvolutionError::CorruptLog { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn logged_scores_replay_bit_exact() {
        let b = PenaltyBreakdown { undecoded: 3, mean_ber: 0.37357954545454547, total_iterations: 917, ..Default::default() };
        let r = ScoreRecord::new(b, &EvalProtocol::default(), H);
        let mut d = db(2);
        d.register(0, &prog(1), &r).unwrap();
        let ev = Event::Register { island: 0, program: d.island(0).unwrap().best_program().unwrap().program.clone(), record: r.clone(), status: RegisterStatus::Accepted };
        let line = serde_json::to_string(&ev).unwrap();
        let back = parse_events(line.as_bytes()).unwrap();
        let replayed = Database::replay(d.config().clone(), H, &back).unwrap();
        assert_eq!(replayed.snapshot(), d.snapshot());
    }

    #[test]
    fn best_so_far_never_decreases() {
        let mut d = Database::new(DatabaseConfig { islands: 4, reset_every: 5, ..Default::default() }, H).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..60 {
            d.register(i % 4, &prog(i), &rec(1 + (i * 37) % 50)).unwrap();
            let now = d.stats().global_best.unwrap().score;
            assert!(now >= best);
            best = now;
        }
    }
}
