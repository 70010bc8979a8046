mod common;

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use ahd_core::evolution::read_events;
use ahd_services::local::{run_distributed, run_local, RunPaths};
use ahd_services::report::{read_csv, summarize, TraceRow};
use ahd_services::RunConfig;
use common::*;

fn cfg(budget: u64) -> RunConfig {
    let mut c = small_config();
    c.budget = budget;
    c.database.reset_every = 7;
    c.kernel_params.offset = 3.0;
    c
}

fn run(c: &RunConfig, dir: &std::path::Path, resume: bool) {
    run_local(c, dir, resume, &AtomicBool::new(false), |_, _| {}).unwrap();
}

#[test]
fn local_runs_are_byte_identical_and_resumable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, r) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("r"));
    run(&cfg(24), &a, false);
    run(&cfg(24), &b, false);
    let (pa, pb, pr) = (RunPaths::new(&a), RunPaths::new(&b), RunPaths::new(&r));
    let trace_a = std::fs::read(&pa.trace).unwrap();
    assert_eq!(trace_a, std::fs::read(&pb.trace).unwrap());
    assert_eq!(std::fs::read(&pa.events).unwrap(), std::fs::read(&pb.events).unwrap());

    run(&cfg(11), &r, false);
    run(&cfg(24), &r, true);
    assert_eq!(std::fs::read(&pr.trace).unwrap(), trace_a);
    assert_eq!(std::fs::read(&pr.snapshot).unwrap(), std::fs::read(&pa.snapshot).unwrap());

    let rows: Vec<TraceRow> = read_csv(&pa.trace).unwrap();
    assert_eq!(rows.len(), 24);
    assert!(rows.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
    let text = String::from_utf8(trace_a).unwrap();
    assert!(text.starts_with(&format!("{}\n", cfg(24).csv_comment())));
    let s = summarize(&read_events(&pa.events).unwrap());
    assert!(s.is_consistent());
    assert_eq!(s.generated, 24);
    assert!(s.resets >= 3);
    assert!(pa.best.exists() && pa.manifest.exists());
}

#[test]
fn bad_config_fails_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let c = RunConfig { seed_kernel: "nope".into(), ..small_config() };
    assert!(run_local(&c, tmp.path(), false, &AtomicBool::new(false), |_, _| {}).is_err());
    assert!(!RunPaths::new(tmp.path()).events.exists());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn distributed_run_reaches_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cfg(16);
    let summary = run_distributed(&c, tmp.path(), false, Arc::new(AtomicBool::new(false))).await.unwrap();
    assert_eq!(summary.samplers.len(), 2);
    let k = summary.stats.counters;
    assert!(k.generated >= 16);
    assert_eq!(k.accepted + k.catastrophic + k.skipped, k.generated);
    let s = summarize(&read_events(&RunPaths::new(tmp.path()).events).unwrap());
    assert_eq!(s.generated, k.generated);
    assert!(RunPaths::new(tmp.path()).trace.exists());
}
