//! Grammar, parser and canonical serializer.
//!
//! ```text
//! program := { ident "=" expr NEWLINE } "return" ident
//! expr    := term { ("+" | "-") term }
//! term    := unary { ("*" | "/") unary }
//! unary   := "-" NUMBER | "-" unary | primary
//! primary := NUMBER | ident | call | "(" expr ")"
//! call    := ident "(" expr { "," expr } ")"
//! ```
//!
//! `-` directly before a number is part of the literal; any other prefix
//! minus is `neg(..)`, which is also how the serializer prints it.

use std::fmt;

use super::ScriptError;

pub const INPUT: &str = "L";
pub const MAX_STATEMENTS: usize = 64;

/// A numeric literal. Equality is bitwise so that `0` and `-0` differ, as
/// their canonical spellings do.
#[derive(Debug, Clone, Copy)]
pub struct Literal(pub f64);

impl PartialEq for Literal {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Literal {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Tanh,
    Atanh,
    Log,
    Exp,
    Abs,
    Sgn,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

/// Row reductions. `*Excl` leave the current edge out; `*All` aggregate the
/// whole row and broadcast the result to every edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reduction {
    SumExcl,
    ProdExcl,
    MinExcl,
    SignprodExcl,
    SumAll,
    ProdAll,
    MinAll,
    SignprodAll,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 7] =
        [UnaryOp::Tanh, UnaryOp::Atanh, UnaryOp::Log, UnaryOp::Exp, UnaryOp::Abs, UnaryOp::Sgn, UnaryOp::Neg];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Tanh => "tanh",
            UnaryOp::Atanh => "atanh",
            UnaryOp::Log => "log",
            UnaryOp::Exp => "exp",
            UnaryOp::Abs => "abs",
            UnaryOp::Sgn => "sgn",
            UnaryOp::Neg => "neg",
        }
    }
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Min | BinaryOp::Max => 3,
        }
    }

    pub fn is_infix(self) -> bool {
        self.precedence() < 3
    }
}

impl Reduction {
    pub const ALL: [Reduction; 8] = [
        Reduction::SumExcl,
        Reduction::ProdExcl,
        Reduction::MinExcl,
        Reduction::SignprodExcl,
        Reduction::SumAll,
        Reduction::ProdAll,
        Reduction::MinAll,
        Reduction::SignprodAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Reduction::SumExcl => "sum_excl",
            Reduction::ProdExcl => "prod_excl",
            Reduction::MinExcl => "min_excl",
            Reduction::SignprodExcl => "signprod_excl",
            Reduction::SumAll => "sum_all",
            Reduction::ProdAll => "prod_all",
            Reduction::MinAll => "min_all",
            Reduction::SignprodAll => "signprod_all",
        }
    }

    /// The leave-one-out / whole-row counterpart.
    pub fn counterpart(self) -> Reduction {
        use Reduction::*;
        match self {
            SumExcl => SumAll,
            ProdExcl => ProdAll,
            MinExcl => MinAll,
            SignprodExcl => SignprodAll,
            SumAll => SumExcl,
            ProdAll => ProdExcl,
            MinAll => MinExcl,
            SignprodAll => SignprodExcl,
        }
    }

    pub fn is_excl(self) -> bool {
        matches!(self, Reduction::SumExcl | Reduction::ProdExcl | Reduction::MinExcl | Reduction::SignprodExcl)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(Literal),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Clamp(Box<Expr>, Box<Expr>, Box<Expr>),
    Reduce(Reduction, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(Literal(v))
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    /// Visits every node, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Var(_) => {}
            Expr::Unary(_, a) | Expr::Reduce(_, a) => a.walk(f),
            Expr::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Clamp(a, b, c) => {
                a.walk(f);
                b.walk(f);
                c.walk(f);
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Var(_) => {}
            Expr::Unary(_, a) | Expr::Reduce(_, a) => a.walk_mut(f),
            Expr::Binary(_, a, b) => {
                a.walk_mut(f);
                b.walk_mut(f);
            }
            Expr::Clamp(a, b, c) => {
                a.walk_mut(f);
                b.walk_mut(f);
                c.walk_mut(f);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// Variables referenced by this expression.
    pub fn vars(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                out.push(v.as_str());
            }
        });
        out
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub target: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    pub stmts: Vec<Stmt>,
    pub ret: String,
}

/// Shortest round-trip decimal, switching to exponent form for very large or
/// small magnitudes.
pub fn format_literal(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(Literal(v)) => f.write_str(&format_literal(*v)),
            Expr::Var(name) => f.write_str(name),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Reduce(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Clamp(a, b, c) => write!(f, "clamp({a}, {b}, {c})"),
            Expr::Binary(op, a, b) if !op.is_infix() => write!(f, "{}({a}, {b})", op.symbol()),
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                if a.precedence() < p {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if b.precedence() <= p {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stmts {
            writeln!(f, "{} = {}", s.target, s.expr)?;
        }
        write!(f, "return {}", self.ret)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    Assign,
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ScriptError {
    ScriptError::Syntax { line, col, msg: msg.into() }
}

fn lex(src: &str) -> Result<Vec<Token>, ScriptError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut line_start) = (0usize, 1usize, 0usize);
    while i < chars.len() {
        let c = chars[i];
        let col = i - line_start + 1;
        let mut push = |tok: Tok| out.push(Token { tok, line, col });
        match c {
            '\n' => {
                push(Tok::Newline);
                i += 1;
                line += 1;
                line_start = i;
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '+' => {
                push(Tok::Plus);
                i += 1;
            }
            '-' => {
                push(Tok::Minus);
                i += 1;
            }
            '*' => {
                push(Tok::Star);
                i += 1;
            }
            '/' => {
                push(Tok::Slash);
                i += 1;
            }
            '(' => {
                push(Tok::LParen);
                i += 1;
            }
            ')' => {
                push(Tok::RParen);
                i += 1;
            }
            ',' => {
                push(Tok::Comma);
                i += 1;
            }
            '=' => {
                push(Tok::Assign);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text.parse().map_err(|_| syntax(line, col, format!("malformed number `{text}`")))?;
                if !v.is_finite() {
                    return Err(syntax(line, col, format!("number `{text}` out of range")));
                }
                push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, col: chars.len() - line_start + 1 });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
}

const MAX_NESTING: usize = 256;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> ScriptError {
        let (l, c) = self.here();
        syntax(l, c, msg)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ScriptError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.bump();
        }
    }

    fn enter(&mut self) -> Result<(), ScriptError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(self.err("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self, calls: &mut Vec<Call>) -> Result<Expr, ScriptError> {
        self.enter()?;
        let mut lhs = self.term(calls)?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term(calls)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self, calls: &mut Vec<Call>) -> Result<Expr, ScriptError> {
        let mut lhs = self.unary(calls)?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary(calls)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self, calls: &mut Vec<Call>) -> Result<Expr, ScriptError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return Ok(Expr::num(-v));
            }
            self.enter()?;
            let inner = self.unary(calls)?;
            self.depth -= 1;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.primary(calls)
    }

    fn primary(&mut self, calls: &mut Vec<Call>) -> Result<Expr, ScriptError> {
        let (line, col) = self.here();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::num(v)),
            Tok::LParen => {
                let e = self.expr(calls)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() != Tok::LParen {
                    return Ok(Expr::Var(name));
                }
                self.bump();
                let mut args = vec![self.expr(calls)?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.expr(calls)?);
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                build_call(&name, args, line, col, calls)
            }
            t => Err(syntax(line, col, format!("expected expression, found {}", describe(&t)))),
        }
    }
}

/// A call whose name or arity was not recognised; reported by validation.
#[derive(Debug, Clone)]
pub(crate) struct Call {
    pub name: String,
    pub arity: usize,
    pub line: usize,
    pub col: usize,
}

fn build_call(name: &str, mut args: Vec<Expr>, line: usize, col: usize, bad: &mut Vec<Call>) -> Result<Expr, ScriptError> {
    let n = args.len();
    let unary = UnaryOp::ALL.iter().find(|op| op.name() == name).copied();
    let reduction = Reduction::ALL.iter().find(|op| op.name() == name).copied();
    let expr = match (name, n) {
        (_, 1) if unary.is_some() => Expr::Unary(unary.unwrap(), Box::new(args.pop().unwrap())),
        (_, 1) if reduction.is_some() => Expr::Reduce(reduction.unwrap(), Box::new(args.pop().unwrap())),
        ("min" | "max", 2) => {
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            let op = if name == "min" { BinaryOp::Min } else { BinaryOp::Max };
            Expr::Binary(op, Box::new(a), Box::new(b))
        }
        ("clamp", 3) => {
            let hi = args.pop().unwrap();
            let lo = args.pop().unwrap();
            let x = args.pop().unwrap();
            Expr::Clamp(Box::new(x), Box::new(lo), Box::new(hi))
        }
        _ => {
            bad.push(Call { name: name.to_string(), arity: n, line, col });
            // Placeholder so parsing can continue to report syntax errors
            // first; validation rejects the program.
            Expr::num(0.0)
        }
    };
    Ok(expr)
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(v) => format!("number {v}"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Assign => "`=`".into(),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of input".into(),
    }
}

fn is_reserved(name: &str) -> bool {
    name == INPUT
        || name == "return"
        || matches!(name, "min" | "max" | "clamp")
        || UnaryOp::ALL.iter().any(|o| o.name() == name)
        || Reduction::ALL.iter().any(|o| o.name() == name)
}

/// Parses without semantic checks; returns the AST and any unrecognised
/// calls.
pub(crate) fn parse_unchecked(src: &str) -> Result<(Ast, Vec<Call>, Vec<(usize, usize)>), ScriptError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, depth: 0 };
    let mut stmts = Vec::new();
    let mut positions = Vec::new();
    let mut calls = Vec::new();
    p.skip_newlines();
    loop {
        let (line, col) = p.here();
        match p.bump() {
            Tok::Ident(name) if name == "return" => {
                let ret = match p.bump() {
                    Tok::Ident(r) if r != "return" => r,
                    t => {
                        return Err(syntax(line, col, format!("expected identifier after return, found {}", describe(&t))))
                    }
                };
                p.skip_newlines();
                if *p.peek() != Tok::Eof {
                    return Err(p.err("unexpected input after return"));
                }
                positions.push((line, col));
                return Ok((Ast { stmts, ret }, calls, positions));
            }
            Tok::Ident(target) => {
                p.expect(Tok::Assign, "`=`")?;
                let expr = p.expr(&mut calls)?;
                if !matches!(p.peek(), Tok::Newline) {
                    return Err(p.err(format!("expected end of line, found {}", describe(p.peek()))));
                }
                p.skip_newlines();
                stmts.push(Stmt { target, expr });
                positions.push((line, col));
            }
            Tok::Eof => return Err(syntax(line, col, "missing `return`")),
            t => return Err(syntax(line, col, format!("expected statement, found {}", describe(&t)))),
        }
    }
}

/// Whitelist, definition-before-use and size checks.
pub(crate) fn validate(ast: &Ast, calls: &[Call], positions: &[(usize, usize)]) -> Result<(), ScriptError> {
    let invalid = |line: usize, col: usize, msg: String| ScriptError::Validation { line, col, msg };
    if let Some(c) = calls.first() {
        let known = is_reserved(&c.name) && c.name != INPUT && c.name != "return";
        let msg = if known {
            format!("wrong number of arguments ({}) for `{}`", c.arity, c.name)
        } else {
            format!("unknown operation `{}`", c.name)
        };
        return Err(invalid(c.line, c.col, msg));
    }
    if ast.stmts.len() > MAX_STATEMENTS {
        let (l, c) = positions[MAX_STATEMENTS];
        return Err(invalid(l, c, format!("more than {MAX_STATEMENTS} statements")));
    }
    let mut defined: Vec<&str> = vec![INPUT];
    for (stmt, &(line, col)) in ast.stmts.iter().zip(positions) {
        for v in stmt.expr.vars() {
            if !defined.contains(&v) {
                return Err(invalid(line, col, format!("unknown identifier `{v}`")));
            }
        }
        if is_reserved(&stmt.target) {
            return Err(invalid(line, col, format!("cannot assign to reserved name `{}`", stmt.target)));
        }
        defined.push(&stmt.target);
    }
    if !defined.contains(&ast.ret.as_str()) {
        let (l, c) = positions[ast.stmts.len()];
        return Err(invalid(l, c, format!("unknown identifier `{}`", ast.ret)));
    }
    Ok(())
}
