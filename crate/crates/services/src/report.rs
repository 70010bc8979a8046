//! Summaries and CSV tables derived from an event log.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ahd_core::evolution::{Event, RegisterStatus, ResetTrigger};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// One row per generated candidate, 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub candidate_index: u64,
    /// Empty for rounds that produced no candidate.
    pub score: Option<f64>,
    pub best_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandRow {
    pub candidate_index: u64,
    pub island: usize,
    pub program_count: usize,
    pub best_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub generated: u64,
    pub accepted: u64,
    pub catastrophic: u64,
    /// Duplicates plus rounds without a candidate.
    pub skipped: u64,
    pub duplicates: u64,
    pub resets: u64,
    pub best_score: Option<f64>,
    pub best_hash: Option<String>,
    pub best_source: Option<String>,
}

impl ReportSummary {
    pub fn is_consistent(&self) -> bool {
        self.accepted + self.catastrophic + self.skipped == self.generated
    }
}

pub fn trace(events: &[Event]) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    let mut best: Option<f64> = None;
    for ev in events {
        let score = match ev {
            Event::Register { record, status, .. } => {
                if *status == RegisterStatus::Accepted {
                    best = Some(best.map_or(record.score, |b| b.max(record.score)));
                }
                Some(record.score)
            }
            Event::Skipped { .. } => None,
            Event::Reset { .. } => continue,
        };
        rows.push(TraceRow { candidate_index: rows.len() as u64 + 1, score, best_so_far: best });
    }
    rows
}

pub fn summarize(events: &[Event]) -> ReportSummary {
    let mut s = ReportSummary::default();
    for ev in events {
        match ev {
            Event::Register { program, record, status, .. } => {
                s.generated += 1;
                match status {
                    RegisterStatus::Accepted => {
                        s.accepted += 1;
                        let better = match s.best_score {
                            None => true,
                            Some(b) => record.score > b || (record.score == b && program.source.len() < s.best_source.as_ref().map_or(usize::MAX, |x| x.len())),
                        };
                        if better {
                            s.best_score = Some(record.score);
                            s.best_hash = Some(program.content_hash.clone());
                            s.best_source = Some(program.source.clone());
                        }
                    }
                    RegisterStatus::Catastrophic => s.catastrophic += 1,
                    RegisterStatus::Duplicate => {
                        s.skipped += 1;
                        s.duplicates += 1;
                    }
                }
            }
            Event::Skipped { .. } => {
                s.generated += 1;
                s.skipped += 1;
            }
            Event::Reset { trigger, entries } => s.resets += u64::from(*trigger != ResetTrigger::InitialSeed && !entries.is_empty()),
        }
    }
    s
}

/// Per-island program count and best score after every candidate.
pub fn island_history(events: &[Event]) -> Vec<IslandRow> {
    let mut scores: HashMap<&str, f64> = HashMap::new();
    let mut islands: Vec<(usize, Option<f64>)> = Vec::new();
    let mut rows = Vec::new();
    let mut index = 0u64;
    let grow = |islands: &mut Vec<(usize, Option<f64>)>, i: usize| {
        if islands.len() <= i {
            islands.resize(i + 1, (0, None));
        }
    };
    for ev in events {
        match ev {
            Event::Register { island, program, record, status } => {
                index += 1;
                grow(&mut islands, *island);
                if *status == RegisterStatus::Accepted {
                    scores.insert(&program.content_hash, record.score);
                    let e = &mut islands[*island];
                    e.0 += 1;
                    e.1 = Some(e.1.map_or(record.score, |b| b.max(record.score)));
                }
            }
            Event::Skipped { .. } => index += 1,
            Event::Reset { entries, .. } => {
                for e in entries {
                    grow(&mut islands, e.island.max(e.donor));
                    islands[e.island] = (1, scores.get(e.seed_hash.as_str()).copied());
                }
                continue;
            }
        }
        for (i, (n, b)) in islands.iter().enumerate() {
            rows.push(IslandRow { candidate_index: index, island: i, program_count: *n, best_score: *b });
        }
    }
    rows
}

/// Writes `comment` (a `#` line) followed by a headed CSV of `rows`.
pub fn write_csv<T: Serialize>(path: &Path, comment: &str, rows: &[T]) -> Result<(), ServiceError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{comment}")?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], skipping `#` lines.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
