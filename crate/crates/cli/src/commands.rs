use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ahd_core::evolution::{read_events, EvolutionError};
use ahd_core::kernels::{CheckNodeKernel, KernelRegistry};
use ahd_core::kernelscript::parse;
use ahd_core::phy::{load_context_grid, Context, Link};
use ahd_core::scoring::{compare_kernels, default_sweep_grid, pick_boundary_context, sweep, Evaluator, BOUNDARY_BAND};
use ahd_core::tanner::build_code;
use ahd_services::config::{RunConfig, RunManifest};
use ahd_services::local::{prepare_database, run_distributed, run_local, write_outputs, RunPaths};
use ahd_services::report::{island_history, summarize, trace, write_csv};
use ahd_services::client::DbClient;
use ahd_services::{db, evaluator, ServiceError};
use serde::Serialize;

use crate::{Cli, CliError, CodeArgs, Command, KernelArgs, Mode, Role};

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Codegen { code } => {
            apply_code(&mut cfg, &code);
            codegen(&cfg, out)
        }
        Command::Sweep { code, kernels, grid, kernel, tbs } => {
            apply_code(&mut cfg, &code);
            sweep_cmd(&cfg, out, &kernels, grid.as_deref(), &kernel, tbs)
        }
        Command::Bench { code, kernels, kernel_names, context, trials, tbs } => {
            apply_code(&mut cfg, &code);
            bench(&cfg, out, &kernels, &kernel_names, context.as_deref(), trials, tbs)
        }
        Command::Evolve { mode, role, budget, resume, bind } => {
            if let Some(b) = budget {
                cfg.budget = b;
            }
            evolve(&cfg, out, mode, role, resume, &bind)
        }
        Command::Report { log } => {
            let log = log.unwrap_or_else(|| RunPaths::new(out).events);
            report(&cfg, out, &log)
        }
    }
}

fn apply_code(cfg: &mut RunConfig, args: &CodeArgs) {
    if let Some(p) = &args.code {
        cfg.code = Some(p.clone());
    }
    if let Some(l) = args.lift {
        cfg.lift = l;
    }
}

fn start(command: &str, cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    std::fs::create_dir_all(out)?;
    Ok(RunManifest::new(command, cfg, out)?)
}

fn finish(mut manifest: RunManifest, out: &Path, name: &str) -> Result<(), CliError> {
    manifest.finished_at = Some(ahd_services::config::unix_now());
    manifest.write(&out.join(name))?;
    Ok(())
}

fn codegen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let manifest = start("codegen", cfg, out)?;
    let spec = cfg.code_spec()?;
    let graph = build_code(spec.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::write(out.join("code.txt"), spec.to_text())?;
    println!("N={} K={} M={} Z={} edges={}", graph.n(), graph.k(), graph.m(), spec.lift(), graph.edge_count());
    finish(manifest, out, "codegen_manifest.json")
}

fn registry(cfg: &RunConfig, args: &KernelArgs) -> Result<KernelRegistry, CliError> {
    let mut reg = KernelRegistry::new(cfg.kernel_params);
    for spec in &args.scripts {
        let (id, path) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("--script expects ID=PATH, got `{spec}`")))?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
        let program = parse(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
        reg.register_script(id, program);
    }
    Ok(reg)
}

fn resolve(reg: &KernelRegistry, name: &str) -> Result<Arc<dyn CheckNodeKernel>, CliError> {
    reg.resolve(name)
        .map_err(|e| CliError::Usage(format!("{e}; known kernels: {}", reg.names().join(", "))))
}

/// Script kernels run under the protocol's budget; built-in ones unmetered.
fn decode_config(cfg: &RunConfig, names: &[String]) -> ahd_core::decoder::DecodeConfig {
    let mut dc = cfg.protocol.decode_config();
    if !names.iter().any(|n| n.starts_with("script:")) {
        dc.budget = None;
    }
    dc
}

fn link(cfg: &RunConfig) -> Result<Link, CliError> {
    cfg.validate()?;
    Ok(cfg.build_link()?)
}

#[derive(Serialize)]
struct SweepRow {
    n_prb: usize,
    mcs_index: usize,
    snr_db: f64,
    success_fraction: f64,
    mean_iterations: f64,
    mean_ber: f64,
}

fn sweep_cmd(cfg: &RunConfig, out: &Path, kernels: &KernelArgs, grid: Option<&Path>, kernel: &str, tbs: usize) -> Result<(), CliError> {
    let reg = registry(cfg, kernels)?;
    let k = resolve(&reg, kernel)?;
    let contexts = match grid {
        Some(p) => load_context_grid(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => default_sweep_grid(),
    };
    let link = link(cfg)?;
    let manifest = start("sweep", cfg, out)?;
    let points = sweep(&link, k.as_ref(), &contexts, tbs, cfg.seed, &decode_config(cfg, &[kernel.to_string()])).map_err(runtime)?;
    let rows: Vec<SweepRow> = points
        .iter()
        .map(|p| SweepRow {
            n_prb: p.context.n_prb,
            mcs_index: p.context.mcs_index,
            snr_db: p.context.snr_db,
            success_fraction: p.success_fraction,
            mean_iterations: p.mean_iterations,
            mean_ber: p.mean_ber,
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &cfg.csv_comment(), &rows)?;
    match pick_boundary_context(&points, BOUNDARY_BAND) {
        Ok(c) => println!("boundary context: {c}"),
        Err(e) => println!("boundary context: none ({e})"),
    }
    finish(manifest, out, "sweep_manifest.json")
}

#[derive(Serialize)]
struct BenchRow {
    kernel: String,
    n_prb: usize,
    mcs_index: usize,
    snr_db: f64,
    trials: usize,
    catastrophic: bool,
    decoded_mean: f64,
    decoded_std: f64,
    ber_mean: f64,
    ber_std: f64,
    iterations_mean: f64,
    iterations_std: f64,
}

fn parse_context(s: &str) -> Result<Context, CliError> {
    let bad = || CliError::Usage(format!("--context expects n_prb,mcs_index,snr_db, got `{s}`"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(Context::new(
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    ))
}

fn bench(
    cfg: &RunConfig,
    out: &Path,
    kernels: &KernelArgs,
    names: &[String],
    context: Option<&str>,
    trials: usize,
    tbs: usize,
) -> Result<(), CliError> {
    let reg = registry(cfg, kernels)?;
    let resolved = names.iter().map(|n| Ok((n.clone(), resolve(&reg, n)?))).collect::<Result<Vec<_>, CliError>>()?;
    let ctx = match context {
        Some(s) => parse_context(s)?,
        None => *cfg.protocol.contexts.first().ok_or_else(|| CliError::Usage("protocol has no contexts".into()))?,
    };
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let link = link(cfg)?;
    let manifest = start("bench", cfg, out)?;
    let rows = compare_kernels(&link, &resolved, &[ctx], tbs, trials, cfg.seed, &decode_config(cfg, names)).map_err(runtime)?;
    let table: Vec<BenchRow> = rows
        .iter()
        .map(|r| BenchRow {
            kernel: r.kernel.clone(),
            n_prb: r.context.n_prb,
            mcs_index: r.context.mcs_index,
            snr_db: r.context.snr_db,
            trials: r.trials,
            catastrophic: r.catastrophic,
            decoded_mean: r.decoded.mean,
            decoded_std: r.decoded.std,
            ber_mean: r.ber.mean,
            ber_std: r.ber.std,
            iterations_mean: r.iterations.mean,
            iterations_std: r.iterations.std,
        })
        .collect();
    write_csv(&out.join("bench.csv"), &cfg.csv_comment(), &table)?;
    println!("context {ctx}, {trials} trials x {tbs} TBs");
    println!("{:<18} {:>16} {:>22} {:>16}", "kernel", "decoded", "ber", "iterations");
    for r in &rows {
        if r.catastrophic {
            println!("{:<18} catastrophic", r.kernel);
            continue;
        }
        println!(
            "{:<18} {:>8.2} ± {:<5.2} {:>10.3e} ± {:<9.2e} {:>7.2} ± {:<5.2}",
            r.kernel, r.decoded.mean, r.decoded.std, r.ber.mean, r.ber.std, r.iterations.mean, r.iterations.std
        );
    }
    finish(manifest, out, "bench_manifest.json")
}

/// Sets `stop` on ctrl-c.
fn stop_on_ctrl_c(rt: &tokio::runtime::Runtime, stop: Arc<AtomicBool>) {
    rt.spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            log::warn!("interrupt received, finishing current candidate");
            stop.store(true, Ordering::SeqCst);
        }
    });
}

fn evolve(cfg: &RunConfig, out: &Path, mode: Mode, role: Role, resume: bool, bind: &str) -> Result<(), CliError> {
    cfg.validate()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let stop = Arc::new(AtomicBool::new(false));
    stop_on_ctrl_c(&rt, stop.clone());
    let summary = match (mode, role) {
        (Mode::Local, Role::Orchestrator) => run_local(cfg, out, resume, &stop, |n, db| {
            if n % 50 == 0 {
                log::info!("{n} candidates, best {:?}", db.stats().global_best.map(|b| b.score));
            }
        })?,
        (Mode::Local, _) => return Err(CliError::Usage("--role db|evaluator requires --mode distributed".into())),
        (Mode::Distributed, Role::Orchestrator) => rt.block_on(run_distributed(cfg, out, resume, stop))?,
        (Mode::Distributed, Role::Db) => return rt.block_on(serve_db(cfg, out, resume, bind, stop)),
        (Mode::Distributed, Role::Evaluator) => return rt.block_on(serve_evaluator(cfg, bind, stop)),
    };
    let c = summary.stats.counters;
    println!("run {} generated={} accepted={} catastrophic={} skipped={} resets={}", summary.run_id, c.generated, c.accepted, c.catastrophic, c.skipped, c.resets);
    if let Some(b) = summary.best() {
        println!("best score {} on island {} ({})", b.score, b.island, &b.hash[..12.min(b.hash.len())]);
        println!("{}", b.source);
    }
    Ok(())
}

async fn wait(stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    }
}

async fn build_evaluator(cfg: &RunConfig) -> Result<Evaluator, CliError> {
    let (link, protocol) = (cfg.build_link()?, cfg.protocol.clone());
    tokio::task::spawn_blocking(move || Evaluator::new(link, protocol))
        .await
        .map_err(runtime)?
        .map_err(|e| CliError::Usage(e.to_string()))
}

async fn serve_db(cfg: &RunConfig, out: &Path, resume: bool, bind: &str, stop: Arc<AtomicBool>) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let paths = RunPaths::new(out);
    let mut manifest = RunManifest::new("evolve-db", cfg, out)?;
    let ev = build_evaluator(cfg).await?;
    manifest.protocol_hash = Some(ev.protocol_hash().to_string());
    let database = prepare_database(cfg, &ev, &paths, resume)?;
    let (handle, state) = db::serve(bind, database).await?;
    println!("database listening on {}", handle.url());
    wait(&stop).await;
    handle.shutdown().await;
    write_outputs(cfg, &state.lock(), &paths, &mut manifest)?;
    Ok(())
}

async fn serve_evaluator(cfg: &RunConfig, bind: &str, stop: Arc<AtomicBool>) -> Result<(), CliError> {
    let db_addr = cfg
        .distributed
        .db_addr
        .clone()
        .ok_or_else(|| CliError::Usage("--role evaluator needs distributed.db_addr in the config".into()))?;
    let ev = Arc::new(build_evaluator(cfg).await?);
    let handle = evaluator::serve(bind, ev, DbClient::new(&db_addr)).await?;
    println!("evaluator listening on {}", handle.url());
    wait(&stop).await;
    handle.shutdown().await;
    Ok(())
}

fn report(cfg: &RunConfig, out: &Path, log: &Path) -> Result<(), CliError> {
    let events = read_events(log).map_err(|e| match e {
        EvolutionError::CorruptLog { line, msg } => CliError::Runtime(format!("{}: corrupt event at line {line}: {msg}", log.display())),
        other => CliError::Runtime(format!("{}: {other}", log.display())),
    })?;
    std::fs::create_dir_all(out)?;
    // Prefer the identity of the run that wrote the log.
    let comment = log
        .parent()
        .map(|d| RunPaths::new(d).manifest)
        .and_then(|p| std::fs::read(p).ok())
        .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
        .map(|m| format!("# run_id={} seed={} tb_batch_seed={}", m.run_id, m.seeds.run, m.seeds.tb_batch))
        .unwrap_or_else(|| cfg.csv_comment());
    write_csv(&out.join("report_trace.csv"), &comment, &trace(&events))?;
    write_csv(&out.join("island_history.csv"), &comment, &island_history(&events))?;
    let s = summarize(&events);
    std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&s).map_err(ServiceError::from)?)?;
    println!(
        "generated={} accepted={} catastrophic={} skipped={} duplicates={} resets={}",
        s.generated, s.accepted, s.catastrophic, s.skipped, s.duplicates, s.resets
    );
    match (&s.best_score, &s.best_source) {
        (Some(score), Some(src)) => println!("best score {score}\n{src}"),
        _ => println!("no accepted programs"),
    }
    Ok(())
}
