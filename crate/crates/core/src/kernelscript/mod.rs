//! KernelScript: the loop-free language candidate CNU rules are written in.
//!
//! A program maps the row of incoming messages `L` of one check node to one
//! output per edge. Every value is a per-edge vector; literals broadcast.
//! There are no loops, conditionals or calls other than the whitelisted
//! math, so evaluation is total apart from the op budget, the wall-clock
//! guard and the final finiteness check, all reported as [`SandboxFault`].
//!
//! ```text
//! t = tanh(L / 2)
//! p = prod_excl(t)
//! m = 2 * atanh(clamp(p, -0.9999999, 0.9999999))
//! return m
//! ```

mod interp;
mod mutate;
mod syntax;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use interp::{interpret, interpret_row, CompiledProgram};
pub use mutate::{mutate, MutationKind, MutationPolicy};
pub use syntax::{format_literal, Ast, BinaryOp, Expr, Literal, Reduction, Stmt, UnaryOp, INPUT, MAX_STATEMENTS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("validation error at {line}:{col}: {msg}")]
    Validation { line: usize, col: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    Timeout,
    OpBudget,
    NumericFault,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("sandbox fault: {kind:?}")]
pub struct SandboxFault {
    pub kind: FaultKind,
}

impl SandboxFault {
    pub fn new(kind: FaultKind) -> Self {
        SandboxFault { kind }
    }
}

/// Resource limits for evaluating one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalBudget {
    /// Scalar operations allowed per decode of one transport block.
    pub max_scalar_ops: u64,
    /// Wall-clock limit for a whole candidate evaluation.
    pub wall_clock_ms: u64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        EvalBudget { max_scalar_ops: 10_000_000, wall_clock_ms: 5_000 }
    }
}

const CLOCK_CHECK_INTERVAL: u64 = 1 << 16;

/// Counts scalar operations against a budget and polls a deadline every
/// [`CLOCK_CHECK_INTERVAL`] operations.
#[derive(Debug, Clone)]
pub struct OpMeter {
    used: u64,
    max_ops: u64,
    deadline: Option<Instant>,
    next_clock_check: u64,
}

impl OpMeter {
    pub fn new(budget: &EvalBudget) -> Self {
        let deadline = Instant::now().checked_add(Duration::from_millis(budget.wall_clock_ms));
        OpMeter::with_deadline(budget.max_scalar_ops, deadline)
    }

    pub fn with_deadline(max_ops: u64, deadline: Option<Instant>) -> Self {
        OpMeter { used: 0, max_ops, deadline, next_clock_check: CLOCK_CHECK_INTERVAL }
    }

    pub fn unlimited() -> Self {
        OpMeter::with_deadline(u64::MAX, None)
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn charge(&mut self, ops: u64) -> Result<(), SandboxFault> {
        let used = self.used.saturating_add(ops);
        if used > self.max_ops {
            return Err(SandboxFault::new(FaultKind::OpBudget));
        }
        self.used = used;
        if used >= self.next_clock_check {
            self.next_clock_check = used.saturating_add(CLOCK_CHECK_INTERVAL);
            self.check_deadline()?;
        }
        Ok(())
    }

    pub fn check_deadline(&self) -> Result<(), SandboxFault> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(SandboxFault::new(FaultKind::Timeout)),
            _ => Ok(()),
        }
    }

    /// Starts a fresh op count that keeps the same deadline.
    pub fn reset_ops(&mut self) {
        self.used = 0;
        self.next_clock_check = CLOCK_CHECK_INTERVAL;
    }
}

/// The wire/storage form of a program: normalized source plus lineage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub source: String,
    pub content_hash: String,
    #[serde(default)]
    pub parent_hashes: Vec<String>,
    #[serde(default)]
    pub generation: u32,
}

/// A parsed and validated candidate.
#[derive(Debug, Clone)]
pub struct KernelProgram {
    source: String,
    ast: Ast,
    compiled: CompiledProgram,
    content_hash: String,
    pub parent_hashes: Vec<String>,
    pub generation: u32,
}

impl PartialEq for KernelProgram {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast && self.parent_hashes == other.parent_hashes && self.generation == other.generation
    }
}

/// Parses and validates `source`.
pub fn parse(source: &str) -> Result<KernelProgram, ScriptError> {
    let (ast, calls, positions) = syntax::parse_unchecked(source)?;
    syntax::validate(&ast, &calls, &positions)?;
    Ok(KernelProgram::from_ast(ast))
}

/// Canonical text of `source`: one statement per line, single spaces around
/// operators, shortest round-trip literals.
pub fn normalize(source: &str) -> Result<String, ScriptError> {
    Ok(parse(source)?.source)
}

/// Lowercase hex SHA-256 of normalized UTF-8 source.
pub fn content_hash(normalized: &str) -> String {
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

impl KernelProgram {
    /// Builds a program from an AST that is known to be valid.
    pub(crate) fn from_ast(ast: Ast) -> KernelProgram {
        let source = ast.to_string();
        let compiled = CompiledProgram::compile(&ast);
        KernelProgram { content_hash: content_hash(&source), source, ast, compiled, parent_hashes: Vec::new(), generation: 0 }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub(crate) fn compiled(&self) -> &CompiledProgram {
        &self.compiled
    }

    /// Canonical text; `parse(p.serialize())` yields the same AST.
    pub fn serialize(&self) -> String {
        self.source.clone()
    }

    pub fn with_lineage(mut self, parent_hashes: Vec<String>, generation: u32) -> Self {
        self.parent_hashes = parent_hashes;
        self.generation = generation;
        self
    }

    pub fn to_record(&self) -> ProgramRecord {
        ProgramRecord {
            source: self.source.clone(),
            content_hash: self.content_hash.clone(),
            parent_hashes: self.parent_hashes.clone(),
            generation: self.generation,
        }
    }

    pub fn from_record(rec: &ProgramRecord) -> Result<Self, ScriptError> {
        Ok(parse(&rec.source)?.with_lineage(rec.parent_hashes.clone(), rec.generation))
    }
}

/// Script forms of the native kernels.
pub mod seeds {
    use crate::kernels::KernelParams;

    use super::format_literal as lit;

    pub fn boxplus(p: &KernelParams) -> String {
        format!(
            "t = tanh(L / 2)\np = prod_excl(t)\nm = 2 * atanh(clamp(p, {}, {}))\nreturn m",
            lit(-p.atanh_clip),
            lit(p.atanh_clip)
        )
    }

    pub fn boxplus_phi(p: &KernelParams) -> String {
        let (lo, hi) = (lit(p.phi_clip_lo), lit(p.phi_clip_hi));
        format!(
            "a = clamp(abs(L), {lo}, {hi})\n\
             f = neg(log(tanh(a / 2)))\n\
             s = clamp(sum_excl(f), {lo}, {hi})\n\
             m = neg(log(tanh(s / 2)))\n\
             r = signprod_excl(L) * m\n\
             return r"
        )
    }

    /// Source of a built-in rule by registry name; the offset rule uses
    /// `p.offset`.
    pub fn by_name(name: &str, p: &KernelParams) -> Option<String> {
        Some(match name {
            "boxplus" => boxplus(p),
            "boxplus-phi" => boxplus_phi(p),
            "min-sum" => min_sum(),
            "offset-min-sum" => offset_min_sum(p.offset),
            "discovered" => discovered(p),
            _ => return None,
        })
    }

    pub fn min_sum() -> String {
        "m = signprod_excl(L) * min_excl(abs(L))\nreturn m".to_string()
    }

    pub fn offset_min_sum(offset: f64) -> String {
        format!("a = min_excl(abs(L))\nm = signprod_excl(L) * max(a - {}, 0)\nreturn m", lit(offset))
    }

    pub fn discovered(p: &KernelParams) -> String {
        format!(
            "t = tanh(L / 2)\n\
             s = sgn(t)\n\
             g = log(abs(t) + {eps})\n\
             total = sum_all(g)\n\
             m = exp(total - g)\n\
             v = signprod_all(s) * s * m\n\
             r = 2 * atanh(clamp(v, {lo}, {hi}))\n\
             return r",
            eps = lit(p.log_eps),
            lo = lit(-p.atanh_clip),
            hi = lit(p.atanh_clip)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{self, KernelParams, KernelSession};
    use rand::Rng;

    const BOXPLUS_SEED: &str =
        "t = tanh(L / 2)\np = prod_excl(t)\nm = 2 * atanh(clamp(p, -0.9999999, 0.9999999))\nreturn m";

    fn run(p: &KernelProgram, row: &[f64]) -> Result<Vec<f64>, SandboxFault> {
        let mut out = vec![0.0; row.len()];
        interpret_row(p, row, &mut out, &mut KernelSession::unmetered())?;
        Ok(out)
    }

    #[test]
    fn seed_programs_parse() {
        let p = parse(BOXPLUS_SEED).unwrap();
        assert_eq!(p.ast().stmts.len(), 3);
        assert_eq!(p.source(), BOXPLUS_SEED);
        let id = parse("return L").unwrap();
        assert_eq!(run(&id, &[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn unknown_operation_is_a_validation_error() {
        match parse("x = foo(L)\nreturn x") {
            Err(ScriptError::Validation { msg, line: 1, .. }) => assert!(msg.contains("foo")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("x = y + 1\nreturn x"), Err(ScriptError::Validation { .. })));
        assert!(matches!(parse("return q"), Err(ScriptError::Validation { .. })));
        assert!(matches!(parse("x = tanh(L, L)\nreturn x"), Err(ScriptError::Validation { .. })));
        assert!(matches!(parse("L = 1\nreturn L"), Err(ScriptError::Validation { .. })));
        assert!(matches!(parse("x = tanh\nreturn x"), Err(ScriptError::Validation { .. })));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse("x = (L + \nreturn x") {
            Err(ScriptError::Syntax { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("x = L"), Err(ScriptError::Syntax { .. })));
        assert!(matches!(parse("x = L $ 2\nreturn x"), Err(ScriptError::Syntax { .. })));
        assert!(matches!(parse("x = 1e999\nreturn x"), Err(ScriptError::Syntax { .. })));
        assert!(matches!(parse("return L\nx = L"), Err(ScriptError::Syntax { .. })));
    }

    #[test]
    fn too_many_statements() {
        let mut src = String::new();
        for i in 0..65 {
            src.push_str(&format!("x{i} = L\n"));
        }
        src.push_str("return x0");
        assert!(matches!(parse(&src), Err(ScriptError::Validation { .. })));
    }

    #[test]
    fn whitespace_and_literal_canonicalization() {
        assert_eq!(normalize("m=L\nreturn m").unwrap(), "m = L\nreturn m");
        assert_eq!(normalize("m = L * 0.50\nreturn m").unwrap(), "m = L * 0.5\nreturn m");
        assert_eq!(normalize("  # c\n\nm = (L)*(2)   \n\n return m\n").unwrap(), "m = L * 2\nreturn m");
        assert_eq!(normalize("m = -(L - 1) - (2 - L)\nreturn m").unwrap(), "m = neg(L - 1) - (2 - L)\nreturn m");
        assert_eq!(normalize("m = L + 1e-12\nreturn m").unwrap(), "m = L + 1e-12\nreturn m");
    }

    #[test]
    fn hash_is_sha256_of_normalized_source() {
        let p = parse("m=L\nreturn m").unwrap();
        assert_eq!(p.content_hash(), content_hash("m = L\nreturn m"));
        assert_eq!(p.content_hash().len(), 64);
        assert_eq!(content_hash(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn boxplus_seed_matches_native() {
        let p = parse(BOXPLUS_SEED).unwrap();
        let params = KernelParams::default();
        let mut rng = crate::seed::rng(17);
        for _ in 0..1000 {
            let d = rng.random_range(2..12);
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-12.0..12.0)).collect();
            let a = run(&p, &row).unwrap();
            let b = kernels::boxplus(&row, &params).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scripts_match_native_kernels() {
        let params = KernelParams::default();
        let pairs: Vec<(String, Box<dyn Fn(&[f64]) -> Vec<f64>>)> = vec![
            (seeds::boxplus(&params), Box::new(move |r| kernels::boxplus(r, &params).unwrap())),
            (seeds::boxplus_phi(&params), Box::new(move |r| kernels::boxplus_phi(r, &params).unwrap())),
            (seeds::min_sum(), Box::new(|r| kernels::min_sum(r).unwrap())),
            (seeds::offset_min_sum(0.5), Box::new(|r| kernels::offset_min_sum(r, 0.5).unwrap())),
            (seeds::discovered(&params), Box::new(move |r| kernels::discovered(r, &params).unwrap())),
        ];
        let mut rng = crate::seed::rng(23);
        for (src, native) in &pairs {
            let p = parse(src).unwrap();
            for _ in 0..500 {
                let d = rng.random_range(2..11);
                let row: Vec<f64> = (0..d).map(|_| rng.random_range(-16.0..16.0)).collect();
                let a = run(&p, &row).unwrap();
                let b = native(&row);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-9, "{src}\n{row:?}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn final_non_finite_output_faults() {
        let p = parse("m = L / 0\nreturn m").unwrap();
        assert_eq!(run(&p, &[1.0, 2.0]).unwrap_err().kind, FaultKind::NumericFault);
        // Non-finite intermediates repaired by a later clamp are allowed.
        let p = parse("x = L / 0\nm = clamp(x, -1, 1)\nreturn m").unwrap();
        assert_eq!(run(&p, &[1.0, -2.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn deep_exp_chain_never_crashes() {
        let mut src = String::from("x0 = exp(L)\n");
        for i in 1..64 {
            src.push_str(&format!("x{i} = exp(exp(x{}))\n", i - 1));
        }
        src.push_str("return x63");
        let p = parse(&src).unwrap();
        let row = vec![30.0; 6];
        let err = run(&p, &row).unwrap_err();
        assert_eq!(err.kind, FaultKind::NumericFault);
        let mut session = KernelSession::new(OpMeter::with_deadline(100, None));
        let mut out = vec![0.0; 6];
        assert_eq!(interpret_row(&p, &row, &mut out, &mut session).unwrap_err().kind, FaultKind::OpBudget);
    }

    #[test]
    fn budget_monotonicity() {
        let p = parse(&seeds::boxplus(&KernelParams::default())).unwrap();
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![f64::from(i) * 0.1 + 0.5; 6]).collect();
        let faults_with = |budget: u64| {
            let mut session = KernelSession::new(OpMeter::with_deadline(budget, None));
            rows.iter().any(|r| {
                let mut out = vec![0.0; r.len()];
                interpret_row(&p, r, &mut out, &mut session).is_err()
            })
        };
        let threshold = (1..100_000).find(|&b| !faults_with(b)).unwrap();
        for b in [1, threshold / 2, threshold - 1] {
            assert!(faults_with(b));
        }
        assert!(!faults_with(threshold * 2));
    }

    #[test]
    fn interpretation_is_deterministic() {
        let p = parse(&seeds::discovered(&KernelParams::default())).unwrap();
        let row = [0.3, -1.7, 4.2, 0.01, -8.0];
        let a = run(&p, &row).unwrap();
        let b = run(&p, &row).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn record_round_trip() {
        let p = parse(BOXPLUS_SEED).unwrap().with_lineage(vec!["ab".into()], 3);
        let back = KernelProgram::from_record(&p.to_record()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn expired_deadline_times_out() {
        let p = parse(BOXPLUS_SEED).unwrap();
        let mut session = KernelSession::new(OpMeter::with_deadline(u64::MAX, Some(Instant::now())));
        let row = vec![1.0; 8];
        let mut out = vec![0.0; 8];
        let mut result = Ok(());
        for _ in 0..100_000 {
            result = interpret_row(&p, &row, &mut out, &mut session);
            if result.is_err() {
                break;
            }
        }
        assert_eq!(result.unwrap_err().kind, FaultKind::Timeout);
    }
}
