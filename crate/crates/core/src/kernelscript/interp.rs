//! Register-machine evaluation of validated programs.
//!
//! Each instruction writes one per-edge register and costs `d` scalar ops
//! (`2d` for reductions) on a row of degree `d`.

use std::collections::HashMap;

use crate::kernels::{min_excluding, product_excluding, signprod_excluding, sum_excluding, KernelSession};

use super::syntax::{Ast, BinaryOp, Expr, Literal, Reduction, UnaryOp, INPUT};
use super::{EvalBudget, FaultKind, KernelProgram, OpMeter, SandboxFault};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Operand {
    Reg(usize),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Instr {
    Unary(UnaryOp, usize, Operand),
    Binary(BinaryOp, usize, Operand, Operand),
    Clamp(usize, Operand, Operand, Operand),
    Reduce(Reduction, usize, Operand),
}

/// Instruction list for a program; register 0 holds the input row.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledProgram {
    instrs: Vec<Instr>,
    registers: usize,
    ret: Operand,
}

impl CompiledProgram {
    pub(crate) fn compile(ast: &Ast) -> CompiledProgram {
        let mut c = Compiler { instrs: Vec::new(), next: 1, env: HashMap::new() };
        c.env.insert(INPUT.to_string(), Operand::Reg(0));
        for s in &ast.stmts {
            let v = c.expr(&s.expr);
            c.env.insert(s.target.clone(), v);
        }
        let ret = c.env.get(&ast.ret).copied().unwrap_or(Operand::Const(f64::NAN));
        CompiledProgram { instrs: c.instrs, registers: c.next, ret }
    }

    pub fn instruction_count(&self) -> usize {
        self.instrs.len()
    }

    /// Scalar ops charged for one row of degree `d`.
    pub fn cost(&self, d: usize) -> u64 {
        self.instrs
            .iter()
            .map(|i| match i {
                Instr::Reduce(..) => 2 * d as u64,
                _ => d as u64,
            })
            .sum()
    }
}

struct Compiler {
    instrs: Vec<Instr>,
    next: usize,
    env: HashMap<String, Operand>,
}

impl Compiler {
    fn fresh(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn expr(&mut self, e: &Expr) -> Operand {
        match e {
            Expr::Num(Literal(v)) => Operand::Const(*v),
            Expr::Var(name) => self.env.get(name).copied().unwrap_or(Operand::Const(f64::NAN)),
            Expr::Unary(op, a) => {
                let a = self.expr(a);
                let dst = self.fresh();
                self.instrs.push(Instr::Unary(*op, dst, a));
                Operand::Reg(dst)
            }
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.expr(a), self.expr(b));
                let dst = self.fresh();
                self.instrs.push(Instr::Binary(*op, dst, a, b));
                Operand::Reg(dst)
            }
            Expr::Clamp(x, lo, hi) => {
                let (x, lo, hi) = (self.expr(x), self.expr(lo), self.expr(hi));
                let dst = self.fresh();
                self.instrs.push(Instr::Clamp(dst, x, lo, hi));
                Operand::Reg(dst)
            }
            Expr::Reduce(op, a) => {
                let a = self.expr(a);
                let dst = self.fresh();
                self.instrs.push(Instr::Reduce(*op, dst, a));
                Operand::Reg(dst)
            }
        }
    }
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Clamp that never panics: NaN passes through and `lo > hi` yields `hi`.
#[inline]
fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    let v = if x < lo { lo } else { x };
    if v > hi {
        hi
    } else {
        v
    }
}

fn unary(op: UnaryOp, x: f64) -> f64 {
    match op {
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Atanh => x.atanh(),
        UnaryOp::Log => x.ln(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::Abs => x.abs(),
        UnaryOp::Sgn => sgn(x),
        UnaryOp::Neg => -x,
    }
}

fn binary(op: BinaryOp, a: f64, b: f64) -> f64 {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
        BinaryOp::Min => a.min(b),
        BinaryOp::Max => a.max(b),
    }
}

#[inline]
fn read(regs: &[Vec<f64>], op: Operand, i: usize) -> f64 {
    match op {
        Operand::Reg(r) => regs[r][i],
        Operand::Const(v) => v,
    }
}

fn reduce(op: Reduction, src: &[f64], out: &mut [f64]) {
    match op {
        Reduction::SumExcl => sum_excluding(src, out),
        Reduction::ProdExcl => product_excluding(src, out),
        Reduction::MinExcl => min_excluding(src, out),
        Reduction::SignprodExcl => signprod_excluding(src, out),
        Reduction::SumAll | Reduction::ProdAll | Reduction::MinAll | Reduction::SignprodAll => {
            let total = match op {
                Reduction::SumAll => src.iter().fold(0.0, |a, &v| a + v),
                Reduction::ProdAll => src.iter().fold(1.0, |a, &v| a * v),
                Reduction::MinAll => src.iter().fold(f64::INFINITY, |a, &v| a.min(v)),
                _ => src.iter().fold(1.0, |a, &v| a * sgn(v)),
            };
            out.iter_mut().for_each(|o| *o = total);
        }
    }
}

/// Evaluates `program` on one check-node row, charging `session.meter`.
/// Only non-finite values in the returned vector fault; intermediates may be
/// infinite or NaN.
pub fn interpret_row(
    program: &KernelProgram,
    input: &[f64],
    output: &mut [f64],
    session: &mut KernelSession,
) -> Result<(), SandboxFault> {
    let code = program.compiled();
    let d = input.len();
    assert_eq!(output.len(), d, "output length must match the row degree");
    session.meter.charge(code.cost(d))?;

    let regs = &mut session.registers;
    if regs.len() < code.registers {
        regs.resize_with(code.registers, Vec::new);
    }
    for r in regs.iter_mut().take(code.registers) {
        r.resize(d, 0.0);
    }
    regs[0].copy_from_slice(input);
    let scratch = &mut session.scratch;
    for instr in &code.instrs {
        match *instr {
            Instr::Unary(op, dst, a) => {
                let mut out = std::mem::take(&mut regs[dst]);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = unary(op, read(regs, a, i));
                }
                regs[dst] = out;
            }
            Instr::Binary(op, dst, a, b) => {
                let mut out = std::mem::take(&mut regs[dst]);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = binary(op, read(regs, a, i), read(regs, b, i));
                }
                regs[dst] = out;
            }
            Instr::Clamp(dst, x, lo, hi) => {
                let mut out = std::mem::take(&mut regs[dst]);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = clamp(read(regs, x, i), read(regs, lo, i), read(regs, hi, i));
                }
                regs[dst] = out;
            }
            Instr::Reduce(op, dst, a) => {
                scratch.clear();
                scratch.extend((0..d).map(|i| read(regs, a, i)));
                reduce(op, scratch, &mut regs[dst]);
            }
        }
    }
    for (i, o) in output.iter_mut().enumerate() {
        *o = read(regs, code.ret, i);
    }
    if output.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SandboxFault::new(FaultKind::NumericFault))
    }
}

/// Evaluates `program` over many rows stored back to back; row `r` spans
/// `input[offsets[r]..offsets[r + 1]]`. The whole call shares one budget.
pub fn interpret(
    program: &KernelProgram,
    input: &[f64],
    offsets: &[usize],
    budget: &EvalBudget,
) -> Result<Vec<f64>, SandboxFault> {
    let mut out = vec![0.0; input.len()];
    let mut session = KernelSession::new(OpMeter::new(budget));
    for w in offsets.windows(2) {
        let (a, b) = (w[0], w[1]);
        interpret_row(program, &input[a..b], &mut out[a..b], &mut session)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn costs_follow_instruction_kinds() {
        let p = parse("t = tanh(L)\ns = sum_excl(t)\nreturn s").unwrap();
        assert_eq!(p.compiled().instruction_count(), 2);
        assert_eq!(p.compiled().cost(5), 5 + 10);
        // Aliases and literals compile to nothing.
        let p = parse("a = L\nb = 3\nreturn a").unwrap();
        assert_eq!(p.compiled().cost(4), 0);
    }

    #[test]
    fn constant_return_broadcasts() {
        let p = parse("b = 3\nreturn b").unwrap();
        let mut out = [0.0; 3];
        interpret_row(&p, &[1.0, 2.0, 3.0], &mut out, &mut KernelSession::unmetered()).unwrap();
        assert_eq!(out, [3.0; 3]);
    }

    #[test]
    fn whole_row_reductions() {
        let p = parse("a = sum_all(L)\nb = prod_all(L)\nc = min_all(L)\nd = signprod_all(L)\nr = a + 10 * b + 100 * c + 1000 * d\nreturn r")
            .unwrap();
        let mut out = [0.0; 3];
        interpret_row(&p, &[1.0, -2.0, 3.0], &mut out, &mut KernelSession::unmetered()).unwrap();
        let expect = 2.0 + 10.0 * -6.0 + 100.0 * -2.0 + 1000.0 * -1.0;
        assert_eq!(out, [expect; 3]);
    }

    #[test]
    fn clamp_with_swapped_bounds_does_not_panic() {
        let p = parse("r = clamp(L, 1, -1)\nreturn r").unwrap();
        let mut out = [0.0; 2];
        interpret_row(&p, &[0.0, 5.0], &mut out, &mut KernelSession::unmetered()).unwrap();
        assert_eq!(out, [-1.0, -1.0]);
    }

    #[test]
    fn batch_matches_rows() {
        let p = parse("m = signprod_excl(L) * min_excl(abs(L))\nreturn m").unwrap();
        let input = [1.0, -2.0, 3.0, 0.5, 4.0];
        let out = interpret(&p, &input, &[0, 3, 5], &EvalBudget::default()).unwrap();
        assert_eq!(out, vec![-2.0, 1.0, -1.0, 4.0, 0.5]);
    }
}
