//! Flooding belief-propagation decoder with a pluggable check-node rule and
//! per-TB CRC early stopping.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{CheckNodeKernel, KernelFault, KernelSession};
use crate::kernelscript::{EvalBudget, OpMeter};
use crate::phy::{LlrFrame, ReceivedTb};
use crate::tanner::TannerGraph;
use crate::Bits;

pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_LLR_CLIP: f64 = 16.0;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("clip must be positive, got {0}")]
    NonPositiveClip(f64),
    #[error("max_iters must be at least 1")]
    NoIterations,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite LLR at position {0}")]
    NonFiniteInput(usize),
    #[error("frame count mismatch: layout has {expected} code blocks, got {got}")]
    FrameCount { expected: usize, got: usize },
    #[error(transparent)]
    Kernel(#[from] KernelFault),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub max_iters: usize,
    pub llr_clip: f64,
    /// Budget for candidate kernels. `max_scalar_ops` applies to each TB,
    /// `wall_clock_ms` to the whole batch. `None` runs unmetered.
    pub budget: Option<EvalBudget>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { max_iters: DEFAULT_MAX_ITERS, llr_clip: DEFAULT_LLR_CLIP, budget: None }
    }
}

/// Edge-aligned message buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMessages {
    pub v2c: Vec<f64>,
    pub c2v: Vec<f64>,
}

impl EdgeMessages {
    /// First-iteration state: every edge carries its variable's channel LLR.
    pub fn init(graph: &TannerGraph, channel: &[f64]) -> Self {
        EdgeMessages {
            v2c: graph.edge_vars().iter().map(|&v| channel[v as usize]).collect(),
            c2v: vec![0.0; graph.edge_count()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TbOutcome {
    pub decoded: bool,
    pub iterations_used: usize,
    pub bit_errors: usize,
    pub info_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecodeReport {
    pub tbs: Vec<TbOutcome>,
    pub total_cnu_edge_ops: u64,
}

impl DecodeReport {
    pub fn decoded_count(&self) -> usize {
        self.tbs.iter().filter(|t| t.decoded).count()
    }

    pub fn success_fraction(&self) -> f64 {
        if self.tbs.is_empty() {
            return 0.0;
        }
        self.decoded_count() as f64 / self.tbs.len() as f64
    }

    /// Bit errors over all information bits of the batch.
    pub fn ber(&self) -> f64 {
        let bits: usize = self.tbs.iter().map(|t| t.info_bits).sum();
        if bits == 0 {
            return 0.0;
        }
        self.tbs.iter().map(|t| t.bit_errors).sum::<usize>() as f64 / bits as f64
    }

    pub fn total_iterations(&self) -> usize {
        self.tbs.iter().map(|t| t.iterations_used).sum()
    }

    pub fn mean_iterations_all(&self) -> f64 {
        if self.tbs.is_empty() {
            return 0.0;
        }
        self.total_iterations() as f64 / self.tbs.len() as f64
    }

    /// Mean over decoded TBs only; `None` when nothing decoded.
    pub fn mean_iterations_decoded(&self) -> Option<f64> {
        let n = self.decoded_count();
        (n > 0).then(|| {
            self.tbs.iter().filter(|t| t.decoded).map(|t| t.iterations_used).sum::<usize>() as f64 / n as f64
        })
    }
}

/// One step of the decode loop, recorded when tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    /// CNU over code block `cb`; `edges` is the number of edges visited.
    Cnu { tb: usize, iteration: usize, cb: usize, edges: usize },
    Vnu { tb: usize, iteration: usize, cb: usize, edges: usize },
    Check { tb: usize, iteration: usize, decoded: bool },
}

pub fn clip_llrs(frame: &LlrFrame, clip: f64) -> Result<LlrFrame, DecodeError> {
    if !(clip > 0.0) {
        return Err(DecodeError::NonPositiveClip(clip));
    }
    Ok(LlrFrame { values: frame.values.iter().map(|v| v.clamp(-clip, clip)).collect(), origin: frame.origin.clone() })
}

/// Variable-node update. Returns `(v2c, posterior)`, both clipped.
pub fn vnu_step(
    graph: &TannerGraph,
    channel: &[f64],
    c2v: &[f64],
    clip: f64,
) -> Result<(Vec<f64>, Vec<f64>), DecodeError> {
    if channel.len() != graph.n() {
        return Err(DecodeError::LengthMismatch { expected: graph.n(), got: channel.len() });
    }
    if c2v.len() != graph.edge_count() {
        return Err(DecodeError::LengthMismatch { expected: graph.edge_count(), got: c2v.len() });
    }
    let mut v2c = vec![0.0; c2v.len()];
    let mut posterior = vec![0.0; channel.len()];
    vnu_into(graph, channel, c2v, clip, &mut v2c, &mut posterior);
    Ok((v2c, posterior))
}

fn vnu_into(graph: &TannerGraph, channel: &[f64], c2v: &[f64], clip: f64, v2c: &mut [f64], posterior: &mut [f64]) {
    for (v, post) in posterior.iter_mut().enumerate() {
        let edges = graph.var_edges(v);
        let total = channel[v] + edges.iter().map(|&e| c2v[e as usize]).sum::<f64>();
        for &e in edges {
            v2c[e as usize] = (total - c2v[e as usize]).clamp(-clip, clip);
        }
        *post = total.clamp(-clip, clip);
    }
}

fn cnu_into(
    graph: &TannerGraph,
    kernel: &dyn CheckNodeKernel,
    v2c: &[f64],
    c2v: &mut [f64],
    clip: f64,
    session: &mut KernelSession,
) -> Result<(), KernelFault> {
    for c in 0..graph.m() {
        let r = graph.check_edges(c);
        kernel.update(&v2c[r.clone()], &mut c2v[r.clone()], session)?;
        for x in &mut c2v[r] {
            *x = x.clamp(-clip, clip);
        }
    }
    Ok(())
}

/// Bit 0 iff the LLR is non-negative.
pub fn hard_decide(posterior: &[f64]) -> Result<Bits, DecodeError> {
    if let Some(i) = posterior.iter().position(|v| !v.is_finite()) {
        return Err(DecodeError::NonFiniteInput(i));
    }
    Ok(posterior.iter().map(|&l| u8::from(l < 0.0)).collect())
}

fn hard_into(posterior: &[f64], bits: &mut [u8]) {
    for (b, &l) in bits.iter_mut().zip(posterior) {
        *b = u8::from(l < 0.0);
    }
}

struct CbState {
    channel: Vec<f64>,
    msgs: EdgeMessages,
    posterior: Vec<f64>,
    hard: Bits,
}

struct TbResult {
    outcome: TbOutcome,
    edge_ops: u64,
    trace: Vec<TraceEvent>,
}

fn decode_tb(
    graph: &TannerGraph,
    tb_index: usize,
    tb: &ReceivedTb,
    kernel: &dyn CheckNodeKernel,
    cfg: &DecodeConfig,
    deadline: Option<Instant>,
    tracing: bool,
) -> Result<TbResult, DecodeError> {
    let layout = &tb.layout;
    if tb.frames.len() != layout.num_cbs() {
        return Err(DecodeError::FrameCount { expected: layout.num_cbs(), got: tb.frames.len() });
    }
    let mut cbs = Vec::with_capacity(tb.frames.len());
    for f in &tb.frames {
        if f.len() != graph.n() {
            return Err(DecodeError::LengthMismatch { expected: graph.n(), got: f.len() });
        }
        if let Some(i) = f.values.iter().position(|v| v.is_nan()) {
            return Err(DecodeError::NonFiniteInput(i));
        }
        let channel = clip_llrs(f, cfg.llr_clip)?.values;
        let msgs = EdgeMessages::init(graph, &channel);
        cbs.push(CbState { posterior: channel.clone(), hard: vec![0; graph.n()], channel, msgs });
    }
    let meter = match cfg.budget {
        Some(b) => OpMeter::with_deadline(b.max_scalar_ops, deadline),
        None => OpMeter::unlimited(),
    };
    let mut session = KernelSession::new(meter);
    let mut trace = Vec::new();
    let mut edge_ops = 0u64;
    let edges = graph.edge_count();
    let mut decoded = false;
    let mut iterations_used = 0;
    for it in 1..=cfg.max_iters {
        iterations_used = it;
        session.meter.check_deadline().map_err(KernelFault::from)?;
        for (cb, s) in cbs.iter_mut().enumerate() {
            cnu_into(graph, kernel, &s.msgs.v2c, &mut s.msgs.c2v, cfg.llr_clip, &mut session)?;
            edge_ops += edges as u64;
            vnu_into(graph, &s.channel, &s.msgs.c2v, cfg.llr_clip, &mut s.msgs.v2c, &mut s.posterior);
            hard_into(&s.posterior, &mut s.hard);
            if tracing {
                trace.push(TraceEvent::Cnu { tb: tb_index, iteration: it, cb, edges });
                trace.push(TraceEvent::Vnu { tb: tb_index, iteration: it, cb, edges });
            }
        }
        decoded = cbs.iter().all(|s| crate::tanner::is_codeword(graph, &s.hard)) && {
            let words: Vec<&[u8]> = cbs.iter().map(|s| s.hard.as_slice()).collect();
            layout.extract_payload(&words).1
        };
        if tracing {
            trace.push(TraceEvent::Check { tb: tb_index, iteration: it, decoded });
        }
        if decoded {
            break;
        }
    }
    let words: Vec<&[u8]> = cbs.iter().map(|s| s.hard.as_slice()).collect();
    let (payload, _) = layout.extract_payload(&words);
    let bit_errors = payload.iter().zip(&tb.reference_payload).filter(|(a, b)| a != b).count();
    Ok(TbResult {
        outcome: TbOutcome { decoded, iterations_used, bit_errors, info_bits: tb.reference_payload.len() },
        edge_ops,
        trace,
    })
}

fn run(
    graph: &TannerGraph,
    tbs: &[ReceivedTb],
    kernel: &dyn CheckNodeKernel,
    cfg: &DecodeConfig,
    tracing: bool,
) -> Result<(DecodeReport, Vec<TraceEvent>), DecodeError> {
    if cfg.max_iters == 0 {
        return Err(DecodeError::NoIterations);
    }
    if !(cfg.llr_clip > 0.0) {
        return Err(DecodeError::NonPositiveClip(cfg.llr_clip));
    }
    let deadline = cfg.budget.and_then(|b| Instant::now().checked_add(Duration::from_millis(b.wall_clock_ms)));
    let results: Vec<TbResult> = tbs
        .par_iter()
        .enumerate()
        .map(|(i, tb)| decode_tb(graph, i, tb, kernel, cfg, deadline, tracing))
        .collect::<Result<_, _>>()?;
    let mut report = DecodeReport::default();
    let mut trace = Vec::new();
    for r in results {
        report.tbs.push(r.outcome);
        report.total_cnu_edge_ops += r.edge_ops;
        trace.extend(r.trace);
    }
    Ok((report, trace))
}

/// Decodes every TB independently; a TB stops as soon as all its code blocks
/// have zero syndrome and its CRCs verify.
pub fn decode_batch(
    graph: &TannerGraph,
    tbs: &[ReceivedTb],
    kernel: &dyn CheckNodeKernel,
    cfg: &DecodeConfig,
) -> Result<DecodeReport, DecodeError> {
    Ok(run(graph, tbs, kernel, cfg, false)?.0)
}

/// [`decode_batch`] that also returns the sequence of loop steps taken.
pub fn decode_batch_traced(
    graph: &TannerGraph,
    tbs: &[ReceivedTb],
    kernel: &dyn CheckNodeKernel,
    cfg: &DecodeConfig,
) -> Result<(DecodeReport, Vec<TraceEvent>), DecodeError> {
    run(graph, tbs, kernel, cfg, true)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::kernels::{KernelParams, NativeKernel, NativeRule};
    use crate::phy::{BitOrigin, Context, Link, LinkConfig};
    use crate::tanner::{build_code, CodeSpec};
    use rand::Rng;

    fn graph() -> Arc<TannerGraph> {
        Arc::new(build_code(CodeSpec::default_rate_half(32).unwrap()).unwrap())
    }

    fn boxplus() -> NativeKernel {
        NativeKernel::new(NativeRule::Boxplus, KernelParams::default())
    }

    #[test]
    fn clip_examples() {
        let f = LlrFrame { values: vec![25.0, -3.5, 20.0], origin: vec![BitOrigin::Received, BitOrigin::Received, BitOrigin::Shortened] };
        let c = clip_llrs(&f, 16.0).unwrap();
        assert_eq!(c.values, vec![16.0, -3.5, 16.0]);
        assert_eq!(c.origin, f.origin);
        assert!(matches!(clip_llrs(&f, 0.0), Err(DecodeError::NonPositiveClip(_))));
    }

    #[test]
    fn hard_decision_rule() {
        assert_eq!(hard_decide(&[2.3, -0.1, 0.0]).unwrap(), vec![0, 1, 0]);
        assert_eq!(hard_decide(&[1.0; 4]).unwrap(), vec![0; 4]);
        assert!(matches!(hard_decide(&[f64::NAN]), Err(DecodeError::NonFiniteInput(0))));
        let mut rng = crate::seed::rng(5);
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = hard_decide(&v).unwrap();
            for (b, x) in h.iter().zip(&v) {
                assert_eq!(*b == 1, *x < 0.0);
            }
        }
    }

    #[test]
    fn vnu_matches_dense_accumulation() {
        let g = graph();
        let mut rng = crate::seed::rng(9);
        let channel: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c2v: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (v2c, post) = vnu_step(&g, &channel, &c2v, 1e9).unwrap();
        let edges: Vec<(usize, usize)> = g.edges().collect();
        for v in 0..g.n() {
            let mut total = channel[v];
            for (e, &(_, var)) in edges.iter().enumerate() {
                if var == v {
                    total += c2v[e];
                }
            }
            assert!((post[v] - total).abs() < 1e-12);
            for (e, &(_, var)) in edges.iter().enumerate() {
                if var == v {
                    assert!((v2c[e] - (total - c2v[e])).abs() < 1e-12);
                }
            }
        }
        // Zero extrinsic on the first iteration.
        let (v2c, _) = vnu_step(&g, &channel, &vec![0.0; g.edge_count()], 16.0).unwrap();
        assert_eq!(v2c, EdgeMessages::init(&g, &channel).v2c);
        assert!(matches!(vnu_step(&g, &channel[1..], &c2v, 16.0), Err(DecodeError::LengthMismatch { .. })));
    }

    #[test]
    fn vnu_hand_example() {
        // A variable with two edges: channel +3, incoming {+1, -2}.
        let g = build_code(CodeSpec::default_rate_half(1).unwrap()).unwrap();
        let v = (0..g.n()).find(|&v| g.var_edges(v).len() == 2).unwrap();
        let mut c2v = vec![0.0; g.edge_count()];
        let es = g.var_edges(v);
        c2v[es[0] as usize] = 1.0;
        c2v[es[1] as usize] = -2.0;
        let mut channel = vec![0.0; g.n()];
        channel[v] = 3.0;
        let (v2c, post) = vnu_step(&g, &channel, &c2v, 16.0).unwrap();
        assert_eq!(post[v], 2.0);
        assert_eq!((v2c[es[0] as usize], v2c[es[1] as usize]), (1.0, 4.0));
    }

    fn link(g: &Arc<TannerGraph>) -> Link {
        Link::new(Arc::clone(g), LinkConfig::default())
    }

    #[test]
    fn noiseless_decodes_in_one_iteration() {
        let g = graph();
        // BPSK 1/3: every coded bit is received at least once.
        let batch = link(&g).run_link(&Context::new(8, 0, 40.0), 6, 1).unwrap();
        let cfg = DecodeConfig { max_iters: 1, ..Default::default() };
        let r = decode_batch(&g, &batch.frames, &boxplus(), &cfg).unwrap();
        assert!(r.tbs.iter().all(|t| t.decoded && t.iterations_used == 1 && t.bit_errors == 0));
        assert_eq!(r.ber(), 0.0);
    }

    #[test]
    fn single_sign_error_is_corrected() {
        let g = graph();
        let mut batch = link(&g).run_link(&Context::new(4, 0, 40.0), 1, 3).unwrap();
        let f = &mut batch.frames[0].frames[0];
        let i = f.origin.iter().position(|o| *o == BitOrigin::Received).unwrap();
        f.values[i] = -f.values[i].signum() * 2.0;
        let r = decode_batch(&g, &batch.frames, &boxplus(), &DecodeConfig::default()).unwrap();
        assert!(r.tbs[0].decoded);
        assert_eq!(r.tbs[0].bit_errors, 0);
        assert!(r.tbs[0].iterations_used <= 5);
    }

    #[test]
    fn early_stopped_tbs_stop_consuming_work() {
        let g = graph();
        let l = link(&g);
        let clean = l.run_link(&Context::new(2, 3, 40.0), 1, 3).unwrap();
        // Find a noisy TB that needs more than one iteration but decodes.
        let cfg = DecodeConfig::default();
        let mut slow = None;
        for seed in 0..200 {
            let b = l.run_link(&Context::new(2, 3, 1.0), 1, seed).unwrap();
            let r = decode_batch(&g, &b.frames, &boxplus(), &cfg).unwrap();
            if r.tbs[0].decoded && r.tbs[0].iterations_used >= 3 {
                slow = Some((b, r.tbs[0].iterations_used));
                break;
            }
        }
        let (slow, iters) = slow.expect("a slow TB exists");
        let tbs = vec![clean.frames[0].clone(), slow.frames[0].clone()];
        let r = decode_batch(&g, &tbs, &boxplus(), &cfg).unwrap();
        assert_eq!(r.tbs[0].iterations_used, 1);
        assert_eq!(r.tbs[1].iterations_used, iters);
        let edges = g.edge_count() as u64;
        assert_eq!(r.total_cnu_edge_ops, edges * (1 + iters as u64));
        assert!(r.total_cnu_edge_ops < iters as u64 * 2 * edges);
    }

    #[test]
    fn decoded_implies_zero_syndrome_and_crc() {
        let g = graph();
        let batch = link(&g).run_link(&Context::new(2, 3, 1.5), 40, 11).unwrap();
        let r = decode_batch(&g, &batch.frames, &boxplus(), &DecodeConfig::default()).unwrap();
        for (t, src) in r.tbs.iter().zip(&batch.tbs) {
            assert!(t.iterations_used <= DEFAULT_MAX_ITERS);
            assert!(t.bit_errors <= t.info_bits);
            if t.decoded {
                assert_eq!(t.bit_errors, 0, "decoded TB {src:?}");
            }
        }
        assert!(r.decoded_count() > 0);
    }

    #[test]
    fn traversal_is_kernel_independent() {
        let g = graph();
        let batch = link(&g).run_link(&Context::new(1, 3, -5.0), 4, 2).unwrap();
        let cfg = DecodeConfig { max_iters: 5, ..Default::default() };
        let (ra, ta) = decode_batch_traced(&g, &batch.frames, &boxplus(), &cfg).unwrap();
        let ms = NativeKernel::new(NativeRule::MinSum, KernelParams::default());
        let (rb, tb) = decode_batch_traced(&g, &batch.frames, &ms, &cfg).unwrap();
        assert!(ra.tbs.iter().chain(&rb.tbs).all(|t| !t.decoded));
        assert_eq!(ta, tb);
    }

    #[test]
    fn kernel_fault_propagates() {
        use crate::kernels::ScriptKernel;
        use crate::kernelscript::parse;
        let g = graph();
        let batch = link(&g).run_link(&Context::new(1, 3, 5.0), 2, 2).unwrap();
        let bad = ScriptKernel::new("bad", Arc::new(parse("m = L / 0\nreturn m").unwrap()));
        let err = decode_batch(&g, &batch.frames, &bad, &DecodeConfig::default()).unwrap_err();
        assert!(matches!(err, DecodeError::Kernel(_)));
    }

    #[test]
    fn parallel_decode_is_deterministic() {
        let g = graph();
        let batch = link(&g).run_link(&Context::new(2, 6, 4.0), 30, 8).unwrap();
        let a = decode_batch(&g, &batch.frames, &boxplus(), &DecodeConfig::default()).unwrap();
        let b = decode_batch(&g, &batch.frames, &boxplus(), &DecodeConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_iterations_all() >= 1.0);
    }
}
