//! Local program edits used by the offline mutator and tests.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::syntax::{Ast, BinaryOp, Expr, Literal, Stmt, INPUT, MAX_STATEMENTS};
use super::{parse, KernelProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationKind {
    PerturbLiteral,
    SwapBinary,
    WrapClamp,
    SwapReduction,
    DonorSplice,
}

impl MutationKind {
    pub const ALL: [MutationKind; 5] = [
        MutationKind::PerturbLiteral,
        MutationKind::SwapBinary,
        MutationKind::WrapClamp,
        MutationKind::SwapReduction,
        MutationKind::DonorSplice,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationPolicy {
    /// Relative weight per kind, in [`MutationKind::ALL`] order.
    pub weights: [f64; 5],
    /// Candidate bounds for inserted clamps.
    pub clamp_bounds: Vec<f64>,
    pub max_attempts: usize,
}

impl Default for MutationPolicy {
    fn default() -> Self {
        MutationPolicy {
            weights: [3.0, 2.0, 1.0, 1.0, 2.0],
            clamp_bounds: vec![0.9999999, 1.0, 16.0, 20.0],
            max_attempts: 32,
        }
    }
}

/// Returns a child of `program` whose content hash differs from the parent.
/// Deterministic in `seed`. The child records the parent (and donor, when a
/// splice was used) and a generation one past the oldest parent.
pub fn mutate(program: &KernelProgram, donors: &[KernelProgram], seed: u64, policy: &MutationPolicy) -> KernelProgram {
    let mut rng = crate::seed::rng(seed);
    let total: f64 = policy.weights.iter().map(|w| w.max(0.0)).sum();
    for _ in 0..policy.max_attempts.max(1) {
        let kind = pick_kind(&mut rng, &policy.weights, total);
        let mut ast = program.ast().clone();
        let mut donor_hash = None;
        let changed = match kind {
            MutationKind::PerturbLiteral => perturb_literal(&mut ast, &mut rng),
            MutationKind::SwapBinary => swap_binary(&mut ast, &mut rng),
            MutationKind::WrapClamp => wrap_clamp(&mut ast, &mut rng, &policy.clamp_bounds),
            MutationKind::SwapReduction => swap_reduction(&mut ast, &mut rng),
            MutationKind::DonorSplice => match donors.choose(&mut rng) {
                Some(d) => {
                    donor_hash = Some(d.content_hash().to_string());
                    splice(&mut ast, d.ast(), &mut rng)
                }
                None => false,
            },
        };
        if !changed {
            continue;
        }
        if let Some(child) = finish(program, ast, donor_hash) {
            return child;
        }
    }
    // Structural edits were inapplicable: try literals alone, then a clamp
    // around the result.
    for _ in 0..policy.max_attempts.max(1) {
        let mut ast = program.ast().clone();
        if !perturb_literal(&mut ast, &mut rng) {
            break;
        }
        if let Some(child) = finish(program, ast, None) {
            return child;
        }
    }
    fallback(program)
}

fn pick_kind(rng: &mut ChaCha8Rng, weights: &[f64; 5], total: f64) -> MutationKind {
    if !(total > 0.0) {
        return MutationKind::PerturbLiteral;
    }
    let mut x = rng.random::<f64>() * total;
    for (k, w) in MutationKind::ALL.iter().zip(weights) {
        x -= w.max(0.0);
        if x < 0.0 {
            return *k;
        }
    }
    MutationKind::DonorSplice
}

fn finish(parent: &KernelProgram, ast: Ast, donor: Option<String>) -> Option<KernelProgram> {
    // Round-trip through text so the child obeys every parser limit.
    let child = parse(&ast.to_string()).ok()?;
    if child.content_hash() == parent.content_hash() {
        return None;
    }
    let mut parents = vec![parent.content_hash().to_string()];
    if let Some(d) = donor {
        if d != parents[0] {
            parents.push(d);
        }
    }
    Some(child.with_lineage(parents, parent.generation + 1))
}

/// Wraps the returned value in `clamp(.., -20, 20)`; always changes the text.
fn fallback(parent: &KernelProgram) -> KernelProgram {
    let mut ast = parent.ast().clone();
    let bound = 20.0;
    let wrap = |e: Expr| Expr::Clamp(Box::new(e), Box::new(Expr::num(-bound)), Box::new(Expr::num(bound)));
    if ast.stmts.len() < MAX_STATEMENTS {
        let mut name = String::from("out");
        let mut i = 0;
        while name == INPUT || ast.stmts.iter().any(|s| s.target == name) {
            i += 1;
            name = format!("out{i}");
        }
        ast.stmts.push(Stmt { target: name.clone(), expr: wrap(Expr::var(&ast.ret)) });
        ast.ret = name;
    } else {
        let last = ast.stmts.iter_mut().rev().find(|s| s.target == ast.ret).expect("return target is defined");
        let e = std::mem::replace(&mut last.expr, Expr::num(0.0));
        last.expr = wrap(e);
    }
    let child = KernelProgram::from_ast(ast);
    child.with_lineage(vec![parent.content_hash().to_string()], parent.generation + 1)
}

/// Calls `f` on the `n`-th node (pre-order across statements) matching `pred`.
fn edit_nth(ast: &mut Ast, pred: impl Fn(&Expr) -> bool, n: usize, mut f: impl FnMut(&mut Expr)) {
    let mut seen = 0;
    let mut done = false;
    for s in &mut ast.stmts {
        s.expr.walk_mut(&mut |e| {
            if done || !pred(e) {
                return;
            }
            if seen == n {
                f(e);
                done = true;
            }
            seen += 1;
        });
        if done {
            return;
        }
    }
}

fn count(ast: &Ast, pred: impl Fn(&Expr) -> bool) -> usize {
    let mut n = 0;
    for s in &ast.stmts {
        s.expr.walk(&mut |e| n += usize::from(pred(e)));
    }
    n
}

fn pick_node(ast: &mut Ast, rng: &mut ChaCha8Rng, pred: impl Fn(&Expr) -> bool + Copy, f: impl FnMut(&mut Expr)) -> bool {
    let n = count(ast, pred);
    if n == 0 {
        return false;
    }
    let at = rng.random_range(0..n);
    edit_nth(ast, pred, at, f);
    true
}

fn perturb_literal(ast: &mut Ast, rng: &mut ChaCha8Rng) -> bool {
    let scale = rng.random_bool(0.5);
    let factor = rng.random_range(0.5..=2.0);
    let shift = rng.random_range(-1.0..=1.0);
    pick_node(ast, rng, |e| matches!(e, Expr::Num(_)), |e| {
        if let Expr::Num(Literal(v)) = e {
            let next = if scale { *v * factor } else { *v + shift };
            if next.is_finite() {
                *v = next;
            }
        }
    })
}

/// Swaps within `{+, -}`, `{*, /}` and `{min, max}`.
fn swap_binary(ast: &mut Ast, rng: &mut ChaCha8Rng) -> bool {
    pick_node(ast, rng, |e| matches!(e, Expr::Binary(..)), |e| {
        if let Expr::Binary(op, ..) = e {
            *op = match op {
                BinaryOp::Add => BinaryOp::Sub,
                BinaryOp::Sub => BinaryOp::Add,
                BinaryOp::Mul => BinaryOp::Div,
                BinaryOp::Div => BinaryOp::Mul,
                BinaryOp::Min => BinaryOp::Max,
                BinaryOp::Max => BinaryOp::Min,
            };
        }
    })
}

fn wrap_clamp(ast: &mut Ast, rng: &mut ChaCha8Rng, bounds: &[f64]) -> bool {
    let bound = bounds.choose(rng).copied().filter(|b| b.is_finite() && *b > 0.0).unwrap_or(20.0);
    pick_node(ast, rng, |e| !matches!(e, Expr::Num(_)), |e| {
        let inner = std::mem::replace(e, Expr::num(0.0));
        *e = Expr::Clamp(Box::new(inner), Box::new(Expr::num(-bound)), Box::new(Expr::num(bound)));
    })
}

/// Replaces a reduction with its sibling: leave-one-out and whole-row
/// forms of the same aggregate.
fn swap_reduction(ast: &mut Ast, rng: &mut ChaCha8Rng) -> bool {
    pick_node(ast, rng, |e| matches!(e, Expr::Reduce(..)), |e| {
        if let Expr::Reduce(op, _) = e {
            *op = op.counterpart();
        }
    })
}

/// Replaces a random subexpression of some statement with a subexpression
/// of the donor whose variables are all in scope at that statement.
fn splice(ast: &mut Ast, donor: &Ast, rng: &mut ChaCha8Rng) -> bool {
    if ast.stmts.is_empty() {
        return false;
    }
    let si = rng.random_range(0..ast.stmts.len());
    let in_scope: Vec<&str> = std::iter::once(INPUT).chain(ast.stmts[..si].iter().map(|s| s.target.as_str())).collect();
    let mut candidates: Vec<Expr> = Vec::new();
    for s in &donor.stmts {
        s.expr.walk(&mut |e| {
            if !matches!(e, Expr::Num(_)) && e.vars().iter().all(|v| in_scope.contains(v)) {
                candidates.push(e.clone());
            }
        });
    }
    let Some(graft) = candidates.choose(rng).cloned() else {
        return false;
    };
    let stmt = &mut ast.stmts[si];
    let n = stmt.expr.node_count();
    let at = rng.random_range(0..n);
    let mut i = 0;
    let mut graft = Some(graft);
    stmt.expr.walk_mut(&mut |e| {
        if i == at {
            if let Some(g) = graft.take() {
                *e = g;
            }
        }
        i += 1;
    });
    true
}

#[cfg(test)]
mod tests {
    use super::super::seeds;
    use super::*;
    use crate::kernels::KernelParams;

    fn pool() -> Vec<KernelProgram> {
        let p = KernelParams::default();
        [seeds::boxplus(&p), seeds::boxplus_phi(&p), seeds::min_sum(), seeds::offset_min_sum(0.5), seeds::discovered(&p)]
            .iter()
            .map(|s| parse(s).unwrap())
            .collect()
    }

    #[test]
    fn children_are_valid_and_new() {
        let pool = pool();
        let policy = MutationPolicy::default();
        for (i, parent) in pool.iter().enumerate() {
            for seed in 0..200 {
                let child = mutate(parent, &pool, seed * 7 + i as u64, &policy);
                assert_ne!(child.content_hash(), parent.content_hash());
                assert_eq!(parse(child.source()).unwrap().ast(), child.ast());
                assert_eq!(child.parent_hashes[0], parent.content_hash());
                assert_eq!(child.generation, 1);
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let pool = pool();
        let policy = MutationPolicy::default();
        for seed in 0..50 {
            assert_eq!(mutate(&pool[0], &pool, seed, &policy), mutate(&pool[0], &pool, seed, &policy));
        }
    }

    #[test]
    fn fallback_wraps_return() {
        let p = parse("return L").unwrap();
        let policy = MutationPolicy { weights: [0.0, 1.0, 0.0, 0.0, 0.0], ..Default::default() };
        let child = mutate(&p, &[], 1, &policy);
        assert_eq!(child.source(), "out = clamp(L, -20, 20)\nreturn out");
    }
}
