//! Quasi-cyclic LDPC codes.
//!
//! A [`CodeSpec`] is a base matrix of circulant shifts. Expanding every
//! non-null entry into a `Z × Z` shifted identity gives the parity-check
//! matrix `H`; [`TannerGraph`] stores that expansion as a check-major edge
//! list, which is the layout the decoder's message arrays follow.
//!
//! Circulant convention: row `z` of a block with shift `s` has its one at
//! column `(z + s) mod Z`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::Bits;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TannerError {
    #[error("invalid code spec: {0}")]
    InvalidSpec(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parity back-substitution failed")]
    EncodeSingular,
}

/// Base matrix of a quasi-cyclic code. The first `info_cols` base columns
/// carry the systematic message; the remaining columns are parity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpec {
    base_rows: usize,
    base_cols: usize,
    lift: usize,
    info_cols: usize,
    /// Row-major, `None` for an all-zero block.
    shifts: Vec<Option<usize>>,
}

/// Info-part shifts of the default rate-1/2 code, valid for any `Z ≥ 8`
/// and, together with the parity part, free of length-4 cycles for
/// `Z ∈ {8, 16, 32}`.
const DEFAULT_INFO_SHIFTS: [[usize; 4]; 4] = [[6, 2, 2, 3], [0, 7, 3, 7], [4, 5, 2, 2], [7, 1, 0, 7]];

/// Shift of the outer two entries of the weight-3 parity column.
const DEFAULT_PARITY_SHIFT: usize = 7;

impl CodeSpec {
    pub fn new(
        base_rows: usize,
        base_cols: usize,
        lift: usize,
        info_cols: usize,
        shifts: Vec<Option<usize>>,
    ) -> Result<Self, TannerError> {
        let spec = CodeSpec { base_rows, base_cols, lift, info_cols, shifts };
        spec.validate()?;
        Ok(spec)
    }

    /// The desk-scale 4×8 rate-1/2 code: a dense info part, then a parity
    /// part made of one weight-3 column (shifts `x, -, 0, x`) followed by a
    /// dual diagonal, so every parity column has degree at least 2 and tail
    /// puncturing never leaves a degree-1 erased bit.
    pub fn default_rate_half(lift: usize) -> Result<Self, TannerError> {
        let (rows, cols, info) = (4, 8, 4);
        let z = lift.max(1);
        let mut shifts = vec![None; rows * cols];
        for r in 0..rows {
            for c in 0..info {
                shifts[r * cols + c] = Some(DEFAULT_INFO_SHIFTS[r][c] % z);
            }
        }
        shifts[info] = Some(DEFAULT_PARITY_SHIFT % z);
        shifts[2 * cols + info] = Some(0);
        shifts[3 * cols + info] = Some(DEFAULT_PARITY_SHIFT % z);
        for j in 1..rows {
            shifts[(j - 1) * cols + info + j] = Some(0);
            shifts[j * cols + info + j] = Some(0);
        }
        CodeSpec::new(rows, cols, lift, info, shifts)
    }

    fn validate(&self) -> Result<(), TannerError> {
        let bad = |m: String| Err(TannerError::InvalidSpec(m));
        if self.base_rows == 0 || self.base_cols == 0 || self.lift == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.info_cols == 0 || self.info_cols >= self.base_cols {
            return bad(format!("info_cols {} must be in [1, {})", self.info_cols, self.base_cols));
        }
        if self.base_cols - self.info_cols != self.base_rows {
            return bad(format!(
                "parity part must be square: {} rows vs {} parity columns",
                self.base_rows,
                self.base_cols - self.info_cols
            ));
        }
        if self.shifts.len() != self.base_rows * self.base_cols {
            return bad(format!(
                "expected {} shifts, got {}",
                self.base_rows * self.base_cols,
                self.shifts.len()
            ));
        }
        if let Some(s) = self.shifts.iter().flatten().find(|&&s| s >= self.lift) {
            return bad(format!("shift {s} out of range [0, {})", self.lift));
        }
        for r in 0..self.base_rows {
            let deg = (0..self.base_cols).filter(|&c| self.shift(r, c).is_some()).count();
            if deg < 2 {
                return bad(format!("base row {r} has degree {deg}; check nodes need degree >= 2"));
            }
        }
        Ok(())
    }

    pub fn base_rows(&self) -> usize {
        self.base_rows
    }

    pub fn base_cols(&self) -> usize {
        self.base_cols
    }

    pub fn lift(&self) -> usize {
        self.lift
    }

    pub fn info_cols(&self) -> usize {
        self.info_cols
    }

    pub fn shift(&self, row: usize, col: usize) -> Option<usize> {
        self.shifts[row * self.base_cols + col]
    }

    /// Info bits per code block.
    pub fn k(&self) -> usize {
        self.info_cols * self.lift
    }

    /// Codeword length.
    pub fn n(&self) -> usize {
        self.base_cols * self.lift
    }

    /// Number of parity checks.
    pub fn m(&self) -> usize {
        self.base_rows * self.lift
    }

    pub fn nonnull_count(&self) -> usize {
        self.shifts.iter().flatten().count()
    }

    /// Line-oriented text form: `qcldpc <rows> <cols> <Z> <info_cols>`
    /// followed by one line of shifts per base row, `-` for null.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "qcldpc {} {} {} {}\n",
            self.base_rows, self.base_cols, self.lift, self.info_cols
        );
        for r in 0..self.base_rows {
            let row: Vec<String> = (0..self.base_cols)
                .map(|c| match self.shift(r, c) {
                    Some(s) => s.to_string(),
                    None => "-".to_string(),
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for CodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for CodeSpec {
    type Err = TannerError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(TannerError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "qcldpc" {
            return Err(TannerError::Parse {
                line: hline,
                msg: "header must be `qcldpc <rows> <cols> <Z> <info_cols>`".into(),
            });
        }
        let num = |s: &str| {
            s.parse::<usize>().map_err(|_| TannerError::Parse {
                line: hline,
                msg: format!("bad integer `{s}`"),
            })
        };
        let (rows, cols, lift, info) = (num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?);
        let mut shifts = Vec::with_capacity(rows * cols);
        let mut seen_rows = 0;
        for (line, row) in lines {
            seen_rows += 1;
            if seen_rows > rows {
                return Err(TannerError::Parse { line, msg: "too many rows".into() });
            }
            let entries: Vec<&str> = row.split_whitespace().collect();
            if entries.len() != cols {
                return Err(TannerError::Parse {
                    line,
                    msg: format!("expected {cols} entries, got {}", entries.len()),
                });
            }
            for e in entries {
                if e == "-" {
                    shifts.push(None);
                } else {
                    let s = e.parse::<usize>().map_err(|_| TannerError::Parse {
                        line,
                        msg: format!("bad shift `{e}`"),
                    })?;
                    shifts.push(Some(s));
                }
            }
        }
        if seen_rows != rows {
            return Err(TannerError::Parse {
                line: hline,
                msg: format!("expected {rows} rows, got {seen_rows}"),
            });
        }
        CodeSpec::new(rows, cols, lift, info, shifts)
    }
}

/// How parity bits are computed from the message.
#[derive(Debug, Clone)]
enum ParityEncoder {
    /// `(check, parity var)` pairs; each check determines its parity bit once
    /// all earlier entries are known.
    BackSubstitution(Vec<(usize, usize)>),
    /// Dense inverse of the parity part, one bit-packed row per parity bit.
    Dense { inverse: Vec<Vec<u64>> },
}

/// Expanded bipartite graph. Edges are check-major: base row, lift index,
/// then base column, which is row-major order over the expanded `H`.
#[derive(Debug, Clone)]
pub struct TannerGraph {
    spec: CodeSpec,
    edge_var: Vec<u32>,
    check_offsets: Vec<usize>,
    /// Edge ids grouped by variable, delimited by `var_offsets`.
    var_edges: Vec<u32>,
    var_offsets: Vec<usize>,
    encoder: ParityEncoder,
}

/// Expands `spec` into its Tanner graph and prepares the encoder.
pub fn build_code(spec: CodeSpec) -> Result<TannerGraph, TannerError> {
    spec.validate()?;
    let z = spec.lift;
    let m = spec.m();
    let n = spec.n();
    let mut edge_var = Vec::with_capacity(spec.nonnull_count() * z);
    let mut check_offsets = Vec::with_capacity(m + 1);
    check_offsets.push(0);
    for r in 0..spec.base_rows {
        for lz in 0..z {
            for c in 0..spec.base_cols {
                if let Some(s) = spec.shift(r, c) {
                    edge_var.push((c * z + (lz + s) % z) as u32);
                }
            }
            check_offsets.push(edge_var.len());
        }
    }

    let mut var_deg = vec![0usize; n];
    for &v in &edge_var {
        var_deg[v as usize] += 1;
    }
    let mut var_offsets = vec![0usize; n + 1];
    for v in 0..n {
        var_offsets[v + 1] = var_offsets[v] + var_deg[v];
    }
    let mut fill = var_offsets.clone();
    let mut var_edges = vec![0u32; edge_var.len()];
    for (e, &v) in edge_var.iter().enumerate() {
        var_edges[fill[v as usize]] = e as u32;
        fill[v as usize] += 1;
    }

    let mut graph = TannerGraph {
        spec,
        edge_var,
        check_offsets,
        var_edges,
        var_offsets,
        encoder: ParityEncoder::BackSubstitution(Vec::new()),
    };
    graph.encoder = match graph.peeling_schedule() {
        Some(schedule) => ParityEncoder::BackSubstitution(schedule),
        None => ParityEncoder::Dense {
            inverse: graph.dense_parity_inverse().ok_or_else(|| {
                TannerError::InvalidSpec("parity part of H is singular".into())
            })?,
        },
    };
    Ok(graph)
}

impl TannerGraph {
    pub fn spec(&self) -> &CodeSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn k(&self) -> usize {
        self.spec.k()
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_var.len()
    }

    /// Variable index of every edge in canonical order.
    pub fn edge_vars(&self) -> &[u32] {
        &self.edge_var
    }

    /// Edge range of check `c` is `check_offsets[c]..check_offsets[c + 1]`.
    pub fn check_offsets(&self) -> &[usize] {
        &self.check_offsets
    }

    pub fn check_edges(&self, check: usize) -> std::ops::Range<usize> {
        self.check_offsets[check]..self.check_offsets[check + 1]
    }

    /// Edge ids incident to variable `v`.
    pub fn var_edges(&self, v: usize) -> &[u32] {
        &self.var_edges[self.var_offsets[v]..self.var_offsets[v + 1]]
    }

    /// `(check, var)` pairs in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m()).flat_map(move |c| self.check_edges(c).map(move |e| (c, self.edge_var[e] as usize)))
    }

    pub fn uses_back_substitution(&self) -> bool {
        matches!(self.encoder, ParityEncoder::BackSubstitution(_))
    }

    /// Stable textual dump of the adjacency, one check per line.
    pub fn adjacency_text(&self) -> String {
        let mut out = String::new();
        for c in 0..self.m() {
            let vars: Vec<String> = self.check_edges(c).map(|e| self.edge_var[e].to_string()).collect();
            out.push_str(&vars.join(" "));
            out.push('\n');
        }
        out
    }

    /// Orders parity bits so that each is the only unknown of some check.
    fn peeling_schedule(&self) -> Option<Vec<(usize, usize)>> {
        let k = self.k();
        let m = self.m();
        let mut unknown = vec![0usize; m];
        for (c, count) in unknown.iter_mut().enumerate() {
            *count = self.check_edges(c).filter(|&e| self.edge_var[e] as usize >= k).count();
        }
        let mut resolved = vec![false; self.n()];
        let mut used = vec![false; m];
        let mut schedule = Vec::with_capacity(m);
        let mut ready: Vec<usize> = (0..m).filter(|&c| unknown[c] == 1).collect();
        while let Some(c) = ready.pop() {
            if used[c] || unknown[c] != 1 {
                continue;
            }
            let v = self
                .check_edges(c)
                .map(|e| self.edge_var[e] as usize)
                .find(|&v| v >= k && !resolved[v])?;
            used[c] = true;
            resolved[v] = true;
            schedule.push((c, v));
            for &e in self.var_edges(v) {
                let other = self.check_of_edge(e as usize);
                unknown[other] -= 1;
                if unknown[other] == 1 && !used[other] {
                    ready.push(other);
                }
            }
        }
        (schedule.len() == m).then_some(schedule)
    }

    fn check_of_edge(&self, e: usize) -> usize {
        self.check_offsets.partition_point(|&o| o <= e) - 1
    }

    /// Gauss-Jordan inverse of the parity part over GF(2).
    fn dense_parity_inverse(&self) -> Option<Vec<Vec<u64>>> {
        let k = self.k();
        let m = self.m();
        let words = m.div_ceil(64);
        let mut a: Vec<Vec<u64>> = vec![vec![0; words]; m];
        let mut inv: Vec<Vec<u64>> = vec![vec![0; words]; m];
        for c in 0..m {
            for e in self.check_edges(c) {
                let v = self.edge_var[e] as usize;
                if v >= k {
                    let p = v - k;
                    a[c][p / 64] ^= 1 << (p % 64);
                }
            }
            inv[c][c / 64] |= 1 << (c % 64);
        }
        for col in 0..m {
            let pivot = (col..m).find(|&r| a[r][col / 64] >> (col % 64) & 1 == 1)?;
            a.swap(col, pivot);
            inv.swap(col, pivot);
            for r in 0..m {
                if r != col && a[r][col / 64] >> (col % 64) & 1 == 1 {
                    for w in 0..words {
                        let (ar, ir) = (a[col][w], inv[col][w]);
                        a[r][w] ^= ar;
                        inv[r][w] ^= ir;
                    }
                }
            }
        }
        Some(inv)
    }
}

/// Systematic encoding: the first `K` codeword bits are `info_bits`.
pub fn encode(graph: &TannerGraph, info_bits: &[u8]) -> Result<Bits, TannerError> {
    let k = graph.k();
    if info_bits.len() != k {
        return Err(TannerError::LengthMismatch { expected: k, got: info_bits.len() });
    }
    let mut cw = vec![0u8; graph.n()];
    cw[..k].copy_from_slice(info_bits);
    match &graph.encoder {
        ParityEncoder::BackSubstitution(schedule) => {
            for &(c, p) in schedule {
                let mut acc = 0u8;
                for e in graph.check_edges(c) {
                    let v = graph.edge_var[e] as usize;
                    if v != p {
                        acc ^= cw[v];
                    }
                }
                cw[p] = acc;
            }
        }
        ParityEncoder::Dense { inverse } => {
            let m = graph.m();
            let words = m.div_ceil(64);
            let mut s = vec![0u64; words];
            for c in 0..m {
                let mut acc = 0u8;
                for e in graph.check_edges(c) {
                    let v = graph.edge_var[e] as usize;
                    if v < k {
                        acc ^= cw[v];
                    }
                }
                if acc == 1 {
                    s[c / 64] |= 1 << (c % 64);
                }
            }
            for (p, row) in inverse.iter().enumerate() {
                let ones: u32 = row.iter().zip(&s).map(|(a, b)| (a & b).count_ones()).sum();
                cw[k + p] = (ones & 1) as u8;
            }
        }
    }
    if syndrome(graph, &cw)?.iter().any(|&b| b != 0) {
        return Err(TannerError::EncodeSingular);
    }
    Ok(cw)
}

/// Parity of every check over `hard_bits`.
pub fn syndrome(graph: &TannerGraph, hard_bits: &[u8]) -> Result<Bits, TannerError> {
    if hard_bits.len() != graph.n() {
        return Err(TannerError::LengthMismatch { expected: graph.n(), got: hard_bits.len() });
    }
    Ok((0..graph.m()).map(|c| syndrome_bit(graph, hard_bits, c)).collect())
}

fn syndrome_bit(graph: &TannerGraph, hard_bits: &[u8], c: usize) -> u8 {
    graph
        .check_edges(c)
        .fold(0u8, |acc, e| acc ^ hard_bits[graph.edge_var[e] as usize])
}

/// True when every check is satisfied. Panics if lengths differ.
pub fn is_codeword(graph: &TannerGraph, hard_bits: &[u8]) -> bool {
    assert_eq!(hard_bits.len(), graph.n());
    (0..graph.m()).all(|c| syndrome_bit(graph, hard_bits, c) == 0)
}
