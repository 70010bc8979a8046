//! Check-node update (CNU) kernels.
//!
//! Every kernel maps the incoming variable-to-check messages of one check
//! node to its outgoing check-to-variable messages with leave-one-out
//! semantics: output `j` depends on every input except `j`.
//!
//! Native kernels: exact `boxplus` (tanh rule), `boxplus-phi` (sum in the
//! φ domain), `min-sum`, `offset-min-sum` and `discovered`, which stays in
//! the tanh domain but aggregates log-magnitudes and divides out each edge,
//! clamping only at the atanh input. Scripted kernels (`script:<id>`) run a
//! [`KernelProgram`] in the sandboxed interpreter.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernelscript::{interpret_row, EvalBudget, KernelProgram, OpMeter, SandboxFault};

/// Stability constants and the min-sum offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub offset: f64,
    pub phi_clip_lo: f64,
    pub phi_clip_hi: f64,
    pub atanh_clip: f64,
    pub log_eps: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { offset: 0.5, phi_clip_lo: 8.5e-8, phi_clip_hi: 16.6, atanh_clip: 1.0 - 1e-7, log_eps: 1e-12 }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<(), KernelFault> {
        let ok = self.offset >= 0.0
            && self.phi_clip_lo < self.phi_clip_hi
            && self.phi_clip_lo > 0.0
            && self.atanh_clip > 0.0
            && self.atanh_clip < 1.0
            && self.log_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(KernelFault::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelFault {
    #[error("kernel `{kernel}` produced a non-finite output")]
    Numeric { kernel: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxFault),
    #[error("check degree {0} is below 2")]
    Degree(usize),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("unknown kernel `{0}`")]
    Unknown(String),
}

/// Per-decode mutable state: the op meter and reusable buffers.
#[derive(Debug)]
pub struct KernelSession {
    pub meter: OpMeter,
    pub(crate) scratch: Vec<f64>,
    pub(crate) registers: Vec<Vec<f64>>,
}

impl KernelSession {
    pub fn new(meter: OpMeter) -> Self {
        KernelSession { meter, scratch: Vec::new(), registers: Vec::new() }
    }

    pub fn unmetered() -> Self {
        KernelSession::new(OpMeter::unlimited())
    }
}

/// A check-node rule usable by the decoder.
pub trait CheckNodeKernel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Writes one output per input. `input.len() >= 2`.
    fn update(&self, input: &[f64], output: &mut [f64], session: &mut KernelSession) -> Result<(), KernelFault>;
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// φ(x) = −ln(tanh(x / 2)) = 2·atanh(e^−x), evaluated so that both tails
/// keep full relative precision.
#[inline]
pub fn phi_exact(x: f64) -> f64 {
    let e = (-x).exp();
    if x > 0.5 {
        2.0 * e.atanh()
    } else {
        e.ln_1p() - (-(-x).exp_m1()).ln()
    }
}

/// [`phi_exact`] with `x` clamped to `[lo, hi]`.
#[inline]
pub fn phi(x: f64, lo: f64, hi: f64) -> f64 {
    phi_exact(x.clamp(lo, hi))
}

fn finite_or(out: &[f64], kernel: &str) -> Result<(), KernelFault> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KernelFault::Numeric { kernel: kernel.to_string() })
    }
}

fn check_degree(input: &[f64], output: &[f64]) -> Result<(), KernelFault> {
    if input.len() < 2 || output.len() != input.len() {
        return Err(KernelFault::Degree(input.len()));
    }
    Ok(())
}

/// Leave-one-out product: `out[j] = Π_{i≠j} values[i]`, prefix times suffix.
#[inline]
pub(crate) fn product_excluding(values: &[f64], out: &mut [f64]) {
    let mut acc = 1.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = acc;
        acc *= v;
    }
    let mut acc = 1.0;
    for (o, &v) in out.iter_mut().zip(values).rev() {
        *o *= acc;
        acc *= v;
    }
}

/// Leave-one-out sum, prefix plus suffix.
#[inline]
pub(crate) fn sum_excluding(values: &[f64], out: &mut [f64]) {
    let mut acc = 0.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = acc;
        acc += v;
    }
    let mut acc = 0.0;
    for (o, &v) in out.iter_mut().zip(values).rev() {
        *o += acc;
        acc += v;
    }
}

/// Leave-one-out minimum via the two smallest values.
#[inline]
pub(crate) fn min_excluding(values: &[f64], out: &mut [f64]) {
    let (mut m1, mut m2, mut at) = (f64::INFINITY, f64::INFINITY, usize::MAX);
    for (i, &v) in values.iter().enumerate() {
        if v < m1 {
            m2 = m1;
            m1 = v;
            at = i;
        } else if v < m2 {
            m2 = v;
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i == at { m2 } else { m1 };
    }
}

/// Leave-one-out sign product with `sgn(0) = +1`.
#[inline]
pub(crate) fn signprod_excluding(values: &[f64], out: &mut [f64]) {
    let total: f64 = values.iter().map(|&v| sgn(v)).product();
    for (o, &v) in out.iter_mut().zip(values) {
        *o = total * sgn(v);
    }
}

fn boxplus_into(input: &[f64], out: &mut [f64], params: &KernelParams, scratch: &mut Vec<f64>) -> Result<(), KernelFault> {
    check_degree(input, out)?;
    scratch.clear();
    scratch.extend(input.iter().map(|&l| (0.5 * l).tanh()));
    product_excluding(scratch, out);
    let c = params.atanh_clip;
    for o in out.iter_mut() {
        *o = 2.0 * o.clamp(-c, c).atanh();
    }
    finite_or(out, "boxplus")
}

fn boxplus_phi_into(
    input: &[f64],
    out: &mut [f64],
    params: &KernelParams,
    scratch: &mut Vec<f64>,
) -> Result<(), KernelFault> {
    check_degree(input, out)?;
    let (lo, hi) = (params.phi_clip_lo, params.phi_clip_hi);
    scratch.clear();
    scratch.extend(input.iter().map(|&l| phi(l.abs(), lo, hi)));
    sum_excluding(scratch, out);
    let total_sign: f64 = input.iter().map(|&l| sgn(l)).product();
    for (o, &l) in out.iter_mut().zip(input) {
        *o = total_sign * sgn(l) * phi(*o, lo, hi);
    }
    finite_or(out, "boxplus-phi")
}

fn min_sum_into(input: &[f64], out: &mut [f64], offset: f64, scratch: &mut Vec<f64>) -> Result<(), KernelFault> {
    check_degree(input, out)?;
    scratch.clear();
    scratch.extend(input.iter().map(|l| l.abs()));
    min_excluding(scratch, out);
    let total_sign: f64 = input.iter().map(|&l| sgn(l)).product();
    for (o, &l) in out.iter_mut().zip(input) {
        *o = total_sign * sgn(l) * (*o - offset).max(0.0);
    }
    finite_or(out, "min-sum")
}

fn discovered_into(
    input: &[f64],
    out: &mut [f64],
    params: &KernelParams,
    scratch: &mut Vec<f64>,
) -> Result<(), KernelFault> {
    check_degree(input, out)?;
    // Sign and magnitude are split after the tanh mapping.
    scratch.clear();
    scratch.extend(input.iter().map(|&l| (0.5 * l).tanh()));
    let total_sign: f64 = scratch.iter().map(|&t| sgn(t)).product();
    // Log-domain product over the whole node.
    for (o, &t) in out.iter_mut().zip(scratch.iter()) {
        *o = (t.abs() + params.log_eps).ln();
    }
    let total_log: f64 = out.iter().sum();
    // Divide the current edge back out and clamp at the atanh input only.
    let c = params.atanh_clip;
    for (o, &t) in out.iter_mut().zip(scratch.iter()) {
        let magnitude = (total_log - *o).exp();
        let signed = total_sign * sgn(t) * magnitude;
        *o = 2.0 * signed.clamp(-c, c).atanh();
    }
    finite_or(out, "discovered")
}

pub fn boxplus(input: &[f64], params: &KernelParams) -> Result<Vec<f64>, KernelFault> {
    let mut out = vec![0.0; input.len()];
    boxplus_into(input, &mut out, params, &mut Vec::new())?;
    Ok(out)
}

pub fn boxplus_phi(input: &[f64], params: &KernelParams) -> Result<Vec<f64>, KernelFault> {
    let mut out = vec![0.0; input.len()];
    boxplus_phi_into(input, &mut out, params, &mut Vec::new())?;
    Ok(out)
}

pub fn min_sum(input: &[f64]) -> Result<Vec<f64>, KernelFault> {
    offset_min_sum(input, 0.0)
}

pub fn offset_min_sum(input: &[f64], offset: f64) -> Result<Vec<f64>, KernelFault> {
    let mut out = vec![0.0; input.len()];
    min_sum_into(input, &mut out, offset, &mut Vec::new())?;
    Ok(out)
}

pub fn discovered(input: &[f64], params: &KernelParams) -> Result<Vec<f64>, KernelFault> {
    let mut out = vec![0.0; input.len()];
    discovered_into(input, &mut out, params, &mut Vec::new())?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NativeRule {
    Boxplus,
    BoxplusPhi,
    MinSum,
    OffsetMinSum,
    Discovered,
}

impl NativeRule {
    pub const ALL: [NativeRule; 5] =
        [NativeRule::Boxplus, NativeRule::BoxplusPhi, NativeRule::MinSum, NativeRule::OffsetMinSum, NativeRule::Discovered];

    pub fn name(self) -> &'static str {
        match self {
            NativeRule::Boxplus => "boxplus",
            NativeRule::BoxplusPhi => "boxplus-phi",
            NativeRule::MinSum => "min-sum",
            NativeRule::OffsetMinSum => "offset-min-sum",
            NativeRule::Discovered => "discovered",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        NativeRule::ALL.into_iter().find(|r| r.name() == name)
    }
}

/// A built-in kernel with its parameters.
#[derive(Debug, Clone)]
pub struct NativeKernel {
    pub rule: NativeRule,
    pub params: KernelParams,
}

impl NativeKernel {
    pub fn new(rule: NativeRule, params: KernelParams) -> Self {
        NativeKernel { rule, params }
    }
}

impl CheckNodeKernel for NativeKernel {
    fn name(&self) -> String {
        self.rule.name().to_string()
    }

    fn update(&self, input: &[f64], output: &mut [f64], session: &mut KernelSession) -> Result<(), KernelFault> {
        let p = &self.params;
        let s = &mut session.scratch;
        match self.rule {
            NativeRule::Boxplus => boxplus_into(input, output, p, s),
            NativeRule::BoxplusPhi => boxplus_phi_into(input, output, p, s),
            NativeRule::MinSum => min_sum_into(input, output, 0.0, s),
            NativeRule::OffsetMinSum => min_sum_into(input, output, p.offset, s),
            NativeRule::Discovered => discovered_into(input, output, p, s),
        }
    }
}

/// A kernel written in the sandboxed language.
#[derive(Debug, Clone)]
pub struct ScriptKernel {
    id: String,
    program: Arc<KernelProgram>,
}

impl ScriptKernel {
    pub fn new(id: impl Into<String>, program: Arc<KernelProgram>) -> Self {
        ScriptKernel { id: id.into(), program }
    }

    pub fn program(&self) -> &KernelProgram {
        &self.program
    }
}

impl CheckNodeKernel for ScriptKernel {
    fn name(&self) -> String {
        format!("script:{}", self.id)
    }

    fn update(&self, input: &[f64], output: &mut [f64], session: &mut KernelSession) -> Result<(), KernelFault> {
        check_degree(input, output)?;
        interpret_row(&self.program, input, output, session)?;
        Ok(())
    }
}

/// Resolves kernel names (`boxplus`, …, `script:<id>`) to kernels.
#[derive(Debug, Clone, Default)]
pub struct KernelRegistry {
    params: KernelParams,
    scripts: BTreeMap<String, Arc<KernelProgram>>,
}

impl KernelRegistry {
    pub fn new(params: KernelParams) -> Self {
        KernelRegistry { params, scripts: BTreeMap::new() }
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Makes `program` available as `script:<id>`.
    pub fn register_script(&mut self, id: impl Into<String>, program: KernelProgram) {
        self.scripts.insert(id.into(), Arc::new(program));
    }

    pub fn names(&self) -> Vec<String> {
        NativeRule::ALL
            .iter()
            .map(|r| r.name().to_string())
            .chain(self.scripts.keys().map(|k| format!("script:{k}")))
            .collect()
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<dyn CheckNodeKernel>, KernelFault> {
        if let Some(rule) = NativeRule::from_name(name) {
            self.params.validate()?;
            return Ok(Arc::new(NativeKernel::new(rule, self.params)));
        }
        if let Some(id) = name.strip_prefix("script:") {
            if let Some(p) = self.scripts.get(id) {
                return Ok(Arc::new(ScriptKernel::new(id, Arc::clone(p))));
            }
        }
        Err(KernelFault::Unknown(name.to_string()))
    }
}

/// Runs `kernel` on one row with a fresh, budgeted session.
pub fn apply(kernel: &dyn CheckNodeKernel, input: &[f64], budget: &EvalBudget) -> Result<Vec<f64>, KernelFault> {
    let mut out = vec![0.0; input.len()];
    let mut session = KernelSession::new(OpMeter::new(budget));
    kernel.update(input, &mut out, &mut session)?;
    Ok(out)
}
