//! Hierarchical candidate score and the fixed evaluation protocol.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decoder::{decode_batch, DecodeConfig, DecodeError, DecodeReport, DEFAULT_LLR_CLIP, DEFAULT_MAX_ITERS};
use crate::kernels::{CheckNodeKernel, ScriptKernel};
use crate::kernelscript::{parse, EvalBudget, KernelProgram};
use crate::phy::{Context, Link, PhyError, ReceivedTb};
use crate::seed::derive_seed;

pub const W_CATASTROPHIC: f64 = 1e9;
pub const W_UNDECODED: f64 = 1e7;
pub const W_BER: f64 = 1e6;
pub const W_ITERATIONS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("no context has success fraction in [{lo}, {hi}]")]
    NoIntermediateZone { lo: f64, hi: f64 },
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("context {context}: {source}")]
    Phy { context: String, source: PhyError },
    #[error("context {context}: {source}")]
    Decode { context: String, source: DecodeError },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub catastrophic: u8,
    pub undecoded: usize,
    pub mean_ber: f64,
    pub total_iterations: usize,
}

impl PenaltyBreakdown {
    pub fn penalty(&self) -> f64 {
        W_CATASTROPHIC * f64::from(self.catastrophic)
            + W_UNDECODED * self.undecoded as f64
            + W_BER * self.mean_ber
            + W_ITERATIONS * self.total_iterations as f64
    }

    pub fn score(&self) -> f64 {
        -self.penalty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Higher is better.
    pub score: f64,
    pub penalty_breakdown: PenaltyBreakdown,
    pub context_ids: Vec<String>,
    pub tb_batch_seed: u64,
    pub protocol_hash: String,
    /// Why a catastrophic record failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

impl ScoreRecord {
    pub fn new(breakdown: PenaltyBreakdown, protocol: &EvalProtocol, protocol_hash: &str) -> Self {
        ScoreRecord {
            score: breakdown.score(),
            penalty_breakdown: breakdown,
            context_ids: protocol.contexts.iter().map(Context::id).collect(),
            tb_batch_seed: protocol.tb_batch_seed,
            protocol_hash: protocol_hash.to_string(),
            fault: None,
        }
    }

    /// A record in the fault tier; every other penalty is zero.
    pub fn catastrophic(protocol: &EvalProtocol, protocol_hash: &str, fault: impl Into<String>) -> Self {
        let b = PenaltyBreakdown { catastrophic: 1, ..Default::default() };
        ScoreRecord { fault: Some(fault.into()), ..ScoreRecord::new(b, protocol, protocol_hash) }
    }

    pub fn is_catastrophic(&self) -> bool {
        self.penalty_breakdown.catastrophic != 0
    }

    /// True when `score` equals the score recomputed from the breakdown.
    pub fn is_consistent(&self) -> bool {
        self.score.to_bits() == self.penalty_breakdown.score().to_bits()
    }

    /// Exact cluster key: the score rounded to six decimals.
    pub fn cluster_key(&self) -> i64 {
        cluster_key(self.score)
    }
}

pub fn cluster_key(score: f64) -> i64 {
    (score * 1e6).round() as i64
}

/// The fixed batch every candidate is scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub contexts: Vec<Context>,
    pub n_tbs: usize,
    pub tb_batch_seed: u64,
    pub max_iters: usize,
    pub clip: f64,
    pub budget: EvalBudget,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            contexts: vec![DEFAULT_BOUNDARY_CONTEXT],
            n_tbs: 30,
            tb_batch_seed: 0x7b_5eed,
            max_iters: DEFAULT_MAX_ITERS,
            clip: DEFAULT_LLR_CLIP,
            budget: EvalBudget::default(),
        }
    }
}

/// The 6×5 sweep grid: 4 PRBs, MCS 0..=5, SNR −6..=6 dB in 3 dB steps.
pub fn default_sweep_grid() -> Vec<Context> {
    let mut out = Vec::new();
    for mcs in 0..6 {
        for snr in [-6.0, -3.0, 0.0, 3.0, 6.0] {
            out.push(Context::new(4, mcs, snr));
        }
    }
    out
}

/// Boundary context of the default code and grid, as picked by
/// [`pick_boundary_context`] on a boxplus sweep.
pub const DEFAULT_BOUNDARY_CONTEXT: Context = Context { n_prb: 4, mcs_index: 3, snr_db: 3.0 };

impl EvalProtocol {
    pub fn validate(&self) -> Result<(), ScoringError> {
        let bad = |m: &str| Err(ScoringError::InvalidProtocol(m.to_string()));
        if self.contexts.is_empty() {
            return bad("no contexts");
        }
        if self.n_tbs == 0 {
            return bad("n_tbs must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.budget.max_scalar_ops == 0 || self.budget.wall_clock_ms == 0 {
            return bad("budgets must be positive");
        }
        Ok(())
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig { max_iters: self.max_iters, llr_clip: self.clip, budget: Some(self.budget) }
    }

    /// Hex SHA-256 over the protocol, the code and the link configuration;
    /// two scores are comparable only when their hashes match.
    pub fn hash(&self, link: &Link) -> String {
        let body = serde_json::json!({
            "protocol": self,
            "code": link.graph().spec().to_text(),
            "link": link.config(),
        });
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }
}

/// Scores candidates against a precomputed fixed batch.
#[derive(Debug, Clone)]
pub struct Evaluator {
    link: Link,
    protocol: EvalProtocol,
    protocol_hash: String,
    batches: Vec<(Context, Vec<ReceivedTb>)>,
}

impl Evaluator {
    pub fn new(link: Link, protocol: EvalProtocol) -> Result<Self, ScoringError> {
        protocol.validate()?;
        let mut batches = Vec::with_capacity(protocol.contexts.len());
        for ctx in &protocol.contexts {
            let b = link
                .run_link(ctx, protocol.n_tbs, protocol.tb_batch_seed)
                .map_err(|source| ScoringError::Phy { context: ctx.id(), source })?;
            batches.push((*ctx, b.frames));
        }
        let protocol_hash = protocol.hash(&link);
        Ok(Evaluator { link, protocol, protocol_hash, batches })
    }

    pub fn protocol(&self) -> &EvalProtocol {
        &self.protocol
    }

    pub fn protocol_hash(&self) -> &str {
        &self.protocol_hash
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    /// Scores any kernel. Kernel faults give a catastrophic record.
    pub fn score_kernel(&self, kernel: &dyn CheckNodeKernel) -> ScoreRecord {
        let cfg = self.protocol.decode_config();
        let mut b = PenaltyBreakdown::default();
        let mut ber_sum = 0.0;
        let mut n = 0usize;
        for (ctx, tbs) in &self.batches {
            let report = match decode_batch(self.link.graph(), tbs, kernel, &cfg) {
                Ok(r) => r,
                Err(e) => {
                    return ScoreRecord::catastrophic(&self.protocol, &self.protocol_hash, format!("{}: {e}", ctx.id()))
                }
            };
            b.undecoded += report.tbs.len() - report.decoded_count();
            b.total_iterations += report.total_iterations();
            ber_sum += report.tbs.iter().map(tb_ber).sum::<f64>();
            n += report.tbs.len();
        }
        b.mean_ber = if n == 0 { 0.0 } else { (ber_sum / n as f64).clamp(0.0, 1.0) };
        ScoreRecord::new(b, &self.protocol, &self.protocol_hash)
    }

    pub fn score_program(&self, program: &KernelProgram) -> ScoreRecord {
        let kernel = ScriptKernel::new(program.content_hash(), Arc::new(program.clone()));
        self.score_kernel(&kernel)
    }

    /// Scores candidate source text; unparseable text is catastrophic.
    pub fn score_source(&self, source: &str) -> ScoreRecord {
        match parse(source) {
            Ok(p) => self.score_program(&p),
            Err(e) => ScoreRecord::catastrophic(&self.protocol, &self.protocol_hash, e.to_string()),
        }
    }
}

fn tb_ber(t: &crate::decoder::TbOutcome) -> f64 {
    if t.info_bits == 0 {
        0.0
    } else {
        t.bit_errors as f64 / t.info_bits as f64
    }
}

/// One-shot scoring of `kernel` under `protocol`.
pub fn score_candidate(link: &Link, kernel: &dyn CheckNodeKernel, protocol: &EvalProtocol) -> Result<ScoreRecord, ScoringError> {
    Ok(Evaluator::new(link.clone(), protocol.clone())?.score_kernel(kernel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub context: Context,
    pub success_fraction: f64,
    /// Mean over all TBs, failures counting `max_iters`.
    pub mean_iterations: f64,
    pub mean_ber: f64,
}

fn run_point(link: &Link, kernel: &dyn CheckNodeKernel, ctx: &Context, n_tbs: usize, seed: u64, cfg: &DecodeConfig) -> Result<DecodeReport, ScoringError> {
    let batch = link.run_link(ctx, n_tbs, seed).map_err(|source| ScoringError::Phy { context: ctx.id(), source })?;
    decode_batch(link.graph(), &batch.frames, kernel, cfg).map_err(|source| ScoringError::Decode { context: ctx.id(), source })
}

fn mean_tb_ber(r: &DecodeReport) -> f64 {
    if r.tbs.is_empty() {
        return 0.0;
    }
    r.tbs.iter().map(tb_ber).sum::<f64>() / r.tbs.len() as f64
}

/// Decodes `n_tbs` TBs at every context. All contexts share `seed`, so the
/// payloads and unit noise draws are common across SNRs.
pub fn sweep(
    link: &Link,
    kernel: &dyn CheckNodeKernel,
    contexts: &[Context],
    n_tbs: usize,
    seed: u64,
    cfg: &DecodeConfig,
) -> Result<Vec<GridPoint>, ScoringError> {
    contexts
        .iter()
        .map(|ctx| {
            let r = run_point(link, kernel, ctx, n_tbs, seed, cfg)?;
            Ok(GridPoint {
                context: *ctx,
                success_fraction: r.success_fraction(),
                mean_iterations: r.mean_iterations_all(),
                mean_ber: mean_tb_ber(&r),
            })
        })
        .collect()
}

pub const BOUNDARY_BAND: (f64, f64) = (0.3, 0.9);

/// The in-band context with the most iterations; ties go to lower SNR, then
/// higher MCS, then more PRBs.
pub fn pick_boundary_context(points: &[GridPoint], band: (f64, f64)) -> Result<Context, ScoringError> {
    let (lo, hi) = band;
    points
        .iter()
        .filter(|p| p.success_fraction >= lo && p.success_fraction <= hi)
        .max_by(|a, b| {
            a.mean_iterations
                .total_cmp(&b.mean_iterations)
                .then(b.context.snr_db.total_cmp(&a.context.snr_db))
                .then(a.context.mcs_index.cmp(&b.context.mcs_index))
                .then(a.context.n_prb.cmp(&b.context.n_prb))
        })
        .map(|p| p.context)
        .ok_or(ScoringError::NoIntermediateZone { lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub kernel: String,
    pub context: Context,
    pub trials: usize,
    pub catastrophic: bool,
    pub decoded: MeanStd,
    pub ber: MeanStd,
    pub iterations: MeanStd,
}

/// Runs every kernel on `trials` independent batches per context; trial `t`
/// uses seed `derive_seed(base_seed, t)` for all kernels.
pub fn compare_kernels(
    link: &Link,
    kernels: &[(String, Arc<dyn CheckNodeKernel>)],
    contexts: &[Context],
    n_tbs: usize,
    trials: usize,
    base_seed: u64,
    cfg: &DecodeConfig,
) -> Result<Vec<ComparisonRow>, ScoringError> {
    if trials == 0 {
        return Err(ScoringError::InvalidProtocol("trials must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for ctx in contexts {
        let batches: Vec<Vec<ReceivedTb>> = (0..trials)
            .map(|t| {
                link.run_link(ctx, n_tbs, derive_seed(base_seed, t as u64))
                    .map(|b| b.frames)
                    .map_err(|source| ScoringError::Phy { context: ctx.id(), source })
            })
            .collect::<Result<_, _>>()?;
        for (name, kernel) in kernels {
            let mut decoded = Vec::with_capacity(trials);
            let mut ber = Vec::with_capacity(trials);
            let mut iters = Vec::with_capacity(trials);
            let mut catastrophic = false;
            for tbs in &batches {
                match decode_batch(link.graph(), tbs, kernel.as_ref(), cfg) {
                    Ok(r) => {
                        decoded.push(r.decoded_count() as f64);
                        ber.push(mean_tb_ber(&r));
                        iters.push(r.mean_iterations_all());
                    }
                    Err(DecodeError::Kernel(_)) => {
                        catastrophic = true;
                        break;
                    }
                    Err(source) => return Err(ScoringError::Decode { context: ctx.id(), source }),
                }
            }
            let (decoded, ber, iterations) = if catastrophic {
                (MeanStd::default(), MeanStd::default(), MeanStd::default())
            } else {
                (MeanStd::of(&decoded), MeanStd::of(&ber), MeanStd::of(&iters))
            };
            rows.push(ComparisonRow { kernel: name.clone(), context: *ctx, trials, catastrophic, decoded, ber, iterations });
        }
    }
    Ok(rows)
}
