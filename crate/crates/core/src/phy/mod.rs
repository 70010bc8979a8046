//! The link-level chain around the decoder.
//!
//! Transmit: payload → TB CRC → code block segmentation (+ CB CRC when more
//! than one block, zero fillers up to `K`) → LDPC encoding → circular-buffer
//! rate matching (fillers are never sent) → block interleaving → scrambling
//! → modulation → AWGN.
//!
//! Receive: soft demapping → descrambling → per-block reshaping →
//! de-interleaving → rate dematching (untransmitted positions get LLR 0) →
//! shortening recovery (fillers get `+llr_sat`). The rate-matching output
//! de-interleaver and the logit/LLR conversion are identities here because
//! the sign convention is fixed at the demapper.

pub mod crc;
pub mod modulation;
pub mod ratematch;
pub mod scrambling;

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::derive_seed;
use crate::tanner::{encode, TannerError, TannerGraph};
use crate::Bits;

pub use crc::{crc_check, crc_compute, CrcSpec};
pub use modulation::{awgn, demap, modulate, noise_var_per_dim, Modulation};
pub use ratematch::{deinterleave, interleave, rate_dematch, rate_match, CircularBuffer};
pub use scrambling::{scramble_bits, scramble_llrs, scrambling_sequence};

#[derive(Debug, Error)]
pub enum PhyError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bit count {len} is not a multiple of {multiple}")]
    BadLength { len: usize, multiple: usize },
    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown MCS index {0}")]
    UnknownMcs(usize),
    #[error("invalid context {context}: {reason}")]
    InvalidContext { context: String, reason: String },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Tanner(#[from] TannerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a codeword position's LLR came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitOrigin {
    Received,
    Punctured,
    Shortened,
}

/// One LLR per codeword position, positive meaning bit 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrFrame {
    pub values: Vec<f64>,
    pub origin: Vec<BitOrigin>,
}

impl LlrFrame {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub const DEFAULT_LLR_SAT: f64 = 20.0;

/// Pins filler positions to `+llr_sat`, i.e. near-certain zeros.
pub fn shortening_recover(mut frame: LlrFrame, fillers: &[usize], llr_sat: f64) -> Result<LlrFrame, PhyError> {
    let len = frame.len();
    if let Some(&bad) = fillers.iter().find(|&&f| f >= len) {
        return Err(PhyError::IndexOutOfRange { index: bad, len });
    }
    for &f in fillers {
        frame.values[f] = llr_sat;
        frame.origin[f] = BitOrigin::Shortened;
    }
    Ok(frame)
}

/// Operating point: resource blocks, MCS index and SNR (Es/N0, dB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub n_prb: usize,
    pub mcs_index: usize,
    pub snr_db: f64,
}

impl Context {
    pub fn new(n_prb: usize, mcs_index: usize, snr_db: f64) -> Self {
        Context { n_prb, mcs_index, snr_db }
    }

    /// Stable identifier used in score records and CSV output.
    pub fn id(&self) -> String {
        format!("prb{}-mcs{}-snr{}", self.n_prb, self.mcs_index, self.snr_db)
    }
}

impl std::fmt::Display for Context {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(n_prb={}, mcs={}, snr={} dB)", self.n_prb, self.mcs_index, self.snr_db)
    }
}

/// Reads a `n_prb,mcs_index,snr_db` CSV with a header row; `#` lines are
/// comments.
pub fn parse_context_grid<R: Read>(reader: R) -> Result<Vec<Context>, PhyError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let ctx: Context = row?;
        if !ctx.snr_db.is_finite() {
            return Err(PhyError::InvalidContext { context: ctx.to_string(), reason: "non-finite SNR".into() });
        }
        out.push(ctx);
    }
    Ok(out)
}

pub fn load_context_grid(path: &Path) -> Result<Vec<Context>, PhyError> {
    parse_context_grid(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub modulation: Modulation,
    pub rate: f64,
}

/// `mcs_index → (modulation, code rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl Default for McsTable {
    fn default() -> Self {
        use Modulation::*;
        let e = |modulation, num: f64, den: f64| McsEntry { modulation, rate: num / den };
        McsTable {
            entries: vec![
                e(Bpsk, 1.0, 3.0),
                e(Bpsk, 1.0, 2.0),
                e(Qpsk, 1.0, 3.0),
                e(Qpsk, 1.0, 2.0),
                e(Qpsk, 2.0, 3.0),
                e(Qpsk, 3.0, 4.0),
                e(Qam16, 1.0, 2.0),
                e(Qam16, 2.0, 3.0),
            ],
        }
    }
}

#[derive(Debug, Deserialize)]
struct McsRow {
    mcs_index: usize,
    modulation_order: usize,
    code_rate: String,
}

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self, PhyError> {
        if entries.is_empty() {
            return Err(PhyError::InvalidTable("empty MCS table".into()));
        }
        if let Some(e) = entries.iter().find(|e| !(e.rate > 0.0 && e.rate <= 1.0)) {
            return Err(PhyError::InvalidTable(format!("code rate {} outside (0, 1]", e.rate)));
        }
        Ok(McsTable { entries })
    }

    pub fn get(&self, mcs_index: usize) -> Result<McsEntry, PhyError> {
        self.entries.get(mcs_index).copied().ok_or(PhyError::UnknownMcs(mcs_index))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with header `mcs_index,modulation_order,code_rate`; indices must
    /// be `0..len` in order and rates may be decimals or `p/q` fractions.
    pub fn parse_csv<R: Read>(reader: R) -> Result<Self, PhyError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for row in rdr.deserialize() {
            let row: McsRow = row?;
            if row.mcs_index != entries.len() {
                return Err(PhyError::InvalidTable(format!(
                    "expected mcs_index {}, found {}",
                    entries.len(),
                    row.mcs_index
                )));
            }
            let modulation = Modulation::from_order(row.modulation_order).ok_or_else(|| {
                PhyError::InvalidTable(format!("unsupported modulation order {}", row.modulation_order))
            })?;
            let rate = parse_rate(&row.code_rate)
                .ok_or_else(|| PhyError::InvalidTable(format!("bad code rate `{}`", row.code_rate)))?;
            entries.push(McsEntry { modulation, rate });
        }
        McsTable::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, PhyError> {
        Self::parse_csv(std::fs::File::open(path)?)
    }
}

fn parse_rate(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((p, q)) => {
            let (p, q): (f64, f64) = (p.trim().parse().ok()?, q.trim().parse().ok()?);
            (q != 0.0).then_some(p / q)
        }
        None => s.parse().ok(),
    }
}

/// Knobs of the simulated link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    /// Resource elements carrying data per PRB.
    pub re_per_prb: usize,
    /// Magnitude given to shortened (filler) positions.
    pub llr_sat: f64,
    /// Block interleaver rows; `None` uses the bits per symbol.
    pub interleaver_depth: Option<usize>,
    pub tb_crc: CrcSpec,
    pub cb_crc: CrcSpec,
    pub mcs_table: McsTable,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            re_per_prb: 48,
            llr_sat: DEFAULT_LLR_SAT,
            interleaver_depth: None,
            tb_crc: CrcSpec::CCITT_FALSE,
            cb_crc: CrcSpec::CCITT_FALSE,
            mcs_table: McsTable::default(),
        }
    }
}

/// Sizes and parameters shared by every TB of one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TbLayout {
    pub payload_bits: usize,
    pub tb_crc: CrcSpec,
    /// Present only when the TB spans several code blocks.
    pub cb_crc: Option<CrcSpec>,
    /// Bits of the `payload ‖ tb_crc` stream carried by each code block.
    pub cb_data_bits: Vec<usize>,
    pub k: usize,
    pub n: usize,
    /// Rate-matched bits per code block.
    pub e: usize,
    pub modulation: Modulation,
    pub interleaver_depth: usize,
}

impl TbLayout {
    pub fn num_cbs(&self) -> usize {
        self.cb_data_bits.len()
    }

    fn cb_crc_len(&self) -> usize {
        self.cb_crc.map_or(0, |c| c.len())
    }

    /// Data plus CB CRC bits of block `cb`, i.e. its non-filler info bits.
    pub fn cb_info_bits(&self, cb: usize) -> usize {
        self.cb_data_bits[cb] + self.cb_crc_len()
    }

    /// Filler positions of block `cb`: the tail of the systematic part.
    pub fn fillers(&self, cb: usize) -> std::ops::Range<usize> {
        self.cb_info_bits(cb)..self.k
    }

    pub fn coded_bits(&self) -> usize {
        self.e * self.num_cbs()
    }

    /// Splits `payload ‖ tb_crc` into `K`-bit information blocks.
    pub fn segment(&self, stream: &[u8]) -> Vec<Bits> {
        let mut start = 0;
        self.cb_data_bits
            .iter()
            .map(|&len| {
                let data = &stream[start..start + len];
                start += len;
                let mut block = data.to_vec();
                if let Some(crc) = &self.cb_crc {
                    block.extend(crc_compute(data, crc));
                }
                block.resize(self.k, 0);
                block
            })
            .collect()
    }

    /// Reassembles the payload from hard-decided codewords and reports
    /// whether every CB CRC and the TB CRC verify.
    pub fn extract_payload(&self, codewords: &[&[u8]]) -> (Bits, bool) {
        let mut ok = codewords.len() == self.num_cbs();
        let mut stream = Vec::with_capacity(self.payload_bits + self.tb_crc.len());
        for (cb, cw) in codewords.iter().enumerate().take(self.num_cbs()) {
            let info = &cw[..self.cb_info_bits(cb)];
            if let Some(crc) = &self.cb_crc {
                ok &= crc_check(info, crc);
            }
            stream.extend_from_slice(&info[..self.cb_data_bits[cb]]);
        }
        ok &= crc_check(&stream, &self.tb_crc);
        stream.truncate(self.payload_bits);
        (stream, ok)
    }
}

/// Ground truth of one transmitted TB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportBlock {
    pub context: Context,
    pub payload: Bits,
    pub crc: Bits,
    /// Per block: data and CB CRC, fillers excluded.
    pub code_blocks: Vec<Bits>,
    pub codewords: Vec<Bits>,
    pub scrambling_seed: u32,
}

/// What the decoder sees for one TB: one frame per code block plus the
/// reference payload used for BER accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedTb {
    pub layout: Arc<TbLayout>,
    pub frames: Vec<LlrFrame>,
    pub reference_payload: Bits,
}

#[derive(Debug, Clone)]
pub struct LinkBatch {
    pub tbs: Vec<TransportBlock>,
    pub frames: Vec<ReceivedTb>,
}

/// A code plus link configuration; runs the full transmit/receive chain.
#[derive(Debug, Clone)]
pub struct Link {
    graph: Arc<TannerGraph>,
    config: LinkConfig,
}

impl Link {
    pub fn new(graph: Arc<TannerGraph>, config: LinkConfig) -> Self {
        Link { graph, config }
    }

    pub fn graph(&self) -> &Arc<TannerGraph> {
        &self.graph
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    /// Transport block sizing for a context.
    pub fn layout(&self, ctx: &Context) -> Result<TbLayout, PhyError> {
        let invalid = |reason: String| PhyError::InvalidContext { context: ctx.to_string(), reason };
        if !ctx.snr_db.is_finite() {
            return Err(invalid("non-finite SNR".into()));
        }
        if ctx.n_prb == 0 {
            return Err(invalid("n_prb must be positive".into()));
        }
        let mcs = self.config.mcs_table.get(ctx.mcs_index)?;
        let q = mcs.modulation.bits_per_symbol();
        let g = ctx.n_prb * self.config.re_per_prb * q;
        let tb_crc = self.config.tb_crc;
        let raw = (g as f64 * mcs.rate).floor() as usize;
        let payload_bits = raw.saturating_sub(tb_crc.len()) / 8 * 8;
        if payload_bits < 8 {
            return Err(invalid(format!("only {g} coded bits; payload would be empty")));
        }
        let (k, n) = (self.graph.k(), self.graph.n());
        let b = payload_bits + tb_crc.len();
        let (cb_crc, cb_data_bits) = if b <= k {
            (None, vec![b])
        } else {
            let cb_crc = self.config.cb_crc;
            if cb_crc.len() >= k {
                return Err(invalid("CB CRC longer than K".into()));
            }
            let c = b.div_ceil(k - cb_crc.len());
            let chunk = b.div_ceil(c);
            let mut sizes = vec![chunk; c - 1];
            sizes.push(b - chunk * (c - 1));
            (Some(cb_crc), sizes)
        };
        let c = cb_data_bits.len();
        let e = g / (c * q) * q;
        if e == 0 {
            return Err(invalid("too few coded bits per code block".into()));
        }
        Ok(TbLayout {
            payload_bits,
            tb_crc,
            cb_crc,
            cb_data_bits,
            k,
            n,
            e,
            modulation: mcs.modulation,
            interleaver_depth: self.config.interleaver_depth.unwrap_or(q).max(1),
        })
    }

    /// Builds one TB from `tb_seed` and returns it with its channel symbols.
    pub fn transmit(
        &self,
        ctx: &Context,
        layout: &TbLayout,
        tb_seed: u64,
    ) -> Result<(TransportBlock, Vec<num_complex::Complex64>), PhyError> {
        let mut rng = crate::seed::rng(derive_seed(tb_seed, 0));
        let payload: Bits = (0..layout.payload_bits).map(|_| rng.random_range(0..2u8)).collect();
        let crc = crc_compute(&payload, &layout.tb_crc);
        let mut stream = payload.clone();
        stream.extend_from_slice(&crc);
        let blocks = layout.segment(&stream);
        let scrambling_seed = (derive_seed(tb_seed, 2) as u32 & 0x7FFF_FFFF) | 1;

        let mut coded = Vec::with_capacity(layout.coded_bits());
        let mut codewords = Vec::with_capacity(blocks.len());
        let mut code_blocks = Vec::with_capacity(blocks.len());
        for (cb, block) in blocks.iter().enumerate() {
            let cw = encode(&self.graph, block)?;
            let fillers: Vec<usize> = layout.fillers(cb).collect();
            let sent = CircularBuffer::new(layout.n, &fillers)?.select(&cw, layout.e)?;
            coded.extend(interleave(&sent, layout.interleaver_depth));
            code_blocks.push(block[..layout.cb_info_bits(cb)].to_vec());
            codewords.push(cw);
        }
        scramble_bits(&mut coded, scrambling_seed);
        let symbols = modulate(&coded, layout.modulation)?;
        let tb = TransportBlock { context: *ctx, payload, crc, code_blocks, codewords, scrambling_seed };
        Ok((tb, symbols))
    }

    /// Receive-side processing of one TB's channel output.
    pub fn receive(
        &self,
        layout: &Arc<TbLayout>,
        noisy: &[num_complex::Complex64],
        noise_var: f64,
        scrambling_seed: u32,
        reference_payload: Bits,
    ) -> Result<ReceivedTb, PhyError> {
        let mut llrs = demap(noisy, layout.modulation, noise_var)?;
        if llrs.len() != layout.coded_bits() {
            return Err(PhyError::LengthMismatch { expected: layout.coded_bits(), got: llrs.len() });
        }
        scramble_llrs(&mut llrs, scrambling_seed);
        let mut frames = Vec::with_capacity(layout.num_cbs());
        for (cb, chunk) in llrs.chunks(layout.e).enumerate() {
            let ordered = deinterleave(chunk, layout.interleaver_depth);
            let fillers: Vec<usize> = layout.fillers(cb).collect();
            let frame = CircularBuffer::new(layout.n, &fillers)?.restore(&ordered);
            frames.push(shortening_recover(frame, &fillers, self.config.llr_sat)?);
        }
        Ok(ReceivedTb { layout: Arc::clone(layout), frames, reference_payload })
    }

    /// Simulates `n_tbs` transport blocks at `ctx`. TB `i` uses the
    /// sub-seed `seed‖i`, so the batch is a pure function of the inputs and
    /// the payloads and noise draws do not depend on the SNR.
    pub fn run_link(&self, ctx: &Context, n_tbs: usize, seed: u64) -> Result<LinkBatch, PhyError> {
        let layout = Arc::new(self.layout(ctx)?);
        let noise_var = noise_var_per_dim(ctx.snr_db);
        let mut tbs = Vec::with_capacity(n_tbs);
        let mut frames = Vec::with_capacity(n_tbs);
        for i in 0..n_tbs {
            let tb_seed = derive_seed(seed, i as u64);
            let (tb, symbols) = self.transmit(ctx, &layout, tb_seed)?;
            let noisy = awgn(&symbols, ctx.snr_db, derive_seed(tb_seed, 1));
            frames.push(self.receive(&layout, &noisy, noise_var, tb.scrambling_seed, tb.payload.clone())?);
            tbs.push(tb);
        }
        Ok(LinkBatch { tbs, frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tanner::{build_code, CodeSpec};

    fn link(z: usize) -> Link {
        Link::new(Arc::new(build_code(CodeSpec::default_rate_half(z).unwrap()).unwrap()), LinkConfig::default())
    }

    #[test]
    fn shortening_sets_saturated_llrs() {
        let frame = LlrFrame { values: vec![0.5; 8], origin: vec![BitOrigin::Received; 8] };
        assert_eq!(shortening_recover(frame.clone(), &[], 20.0).unwrap(), frame);
        let out = shortening_recover(frame.clone(), &[5, 6], 20.0).unwrap();
        assert_eq!(out.values[5], 20.0);
        assert_eq!(out.values[6], 20.0);
        assert_eq!(out.origin[5], BitOrigin::Shortened);
        assert!(matches!(
            shortening_recover(frame, &[8], 20.0),
            Err(PhyError::IndexOutOfRange { index: 8, .. })
        ));
    }

    #[test]
    fn layouts_follow_the_mcs_table() {
        let l = link(32);
        let lay = l.layout(&Context::new(2, 3, 0.0)).unwrap();
        assert_eq!(lay.modulation, Modulation::Qpsk);
        assert_eq!(lay.num_cbs(), 1);
        assert_eq!(lay.payload_bits, 80);
        assert_eq!(lay.e, 192);
        let lay = l.layout(&Context::new(4, 7, 0.0)).unwrap();
        assert!(lay.num_cbs() > 1);
        assert!(lay.cb_crc.is_some());
        let total: usize = lay.cb_data_bits.iter().sum();
        assert_eq!(total, lay.payload_bits + 16);
        assert!(lay.cb_data_bits.iter().all(|&d| d + 16 <= lay.k));
        assert!(matches!(l.layout(&Context::new(2, 99, 0.0)), Err(PhyError::UnknownMcs(99))));
    }

    #[test]
    fn segmentation_round_trip() {
        let l = link(16);
        let lay = l.layout(&Context::new(3, 6, 0.0)).unwrap();
        let mut rng = crate::seed::rng(4);
        let payload: Bits = (0..lay.payload_bits).map(|_| rng.random_range(0..2)).collect();
        let mut stream = payload.clone();
        stream.extend(crc_compute(&payload, &lay.tb_crc));
        let blocks = lay.segment(&stream);
        assert_eq!(blocks.len(), lay.num_cbs());
        for (cb, b) in blocks.iter().enumerate() {
            assert!(b[lay.fillers(cb)].iter().all(|&x| x == 0));
        }
        let refs: Vec<&[u8]> = blocks.iter().map(Vec::as_slice).collect();
        let (out, ok) = lay.extract_payload(&refs);
        assert!(ok);
        assert_eq!(out, payload);
    }

    #[test]
    fn noiseless_chain_reproduces_codeword_signs() {
        let l = link(32);
        for mcs in 0..8 {
            let ctx = Context::new(2, mcs, 0.0);
            let lay = Arc::new(l.layout(&ctx).unwrap());
            let (tb, symbols) = l.transmit(&ctx, &lay, 77).unwrap();
            let rx = l.receive(&lay, &symbols, 0.5, tb.scrambling_seed, tb.payload.clone()).unwrap();
            for (cb, (frame, cw)) in rx.frames.iter().zip(&tb.codewords).enumerate() {
                let fillers = lay.fillers(cb);
                for (i, (&v, &bit)) in frame.values.iter().zip(cw).enumerate() {
                    match frame.origin[i] {
                        BitOrigin::Punctured => assert_eq!(v, 0.0),
                        BitOrigin::Shortened => {
                            assert!(fillers.contains(&i));
                            assert_eq!(v, DEFAULT_LLR_SAT);
                        }
                        BitOrigin::Received => assert_eq!(v < 0.0, bit == 1, "mcs {mcs} pos {i}"),
                    }
                }
            }
        }
    }

    #[test]
    fn high_snr_frames_have_no_sign_errors() {
        let l = link(16);
        let batch = l.run_link(&Context::new(2, 3, 30.0), 5, 1).unwrap();
        for (tb, rx) in batch.tbs.iter().zip(&batch.frames) {
            for (frame, cw) in rx.frames.iter().zip(&tb.codewords) {
                for (i, &v) in frame.values.iter().enumerate() {
                    if frame.origin[i] != BitOrigin::Punctured {
                        assert_eq!(v < 0.0, cw[i] == 1);
                    }
                }
            }
        }
    }

    #[test]
    fn run_link_is_deterministic() {
        let l = link(16);
        let ctx = Context::new(2, 4, 2.0);
        let a = l.run_link(&ctx, 30, 9).unwrap();
        let b = l.run_link(&ctx, 30, 9).unwrap();
        assert_eq!(a.frames.len(), 30);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.tbs, b.tbs);
        let c = l.run_link(&ctx, 30, 10).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn grid_and_mcs_files() {
        let grid = parse_context_grid("# comment\nn_prb,mcs_index,snr_db\n2,3,1.5\n4, 0, -2\n".as_bytes()).unwrap();
        assert_eq!(grid, vec![Context::new(2, 3, 1.5), Context::new(4, 0, -2.0)]);
        let t = McsTable::parse_csv("mcs_index,modulation_order,code_rate\n0,2,1/3\n1,16,0.75\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get(1).unwrap().modulation, Modulation::Qam16);
        assert!((t.get(0).unwrap().rate - 1.0 / 3.0).abs() < 1e-15);
        assert!(McsTable::parse_csv("mcs_index,modulation_order,code_rate\n0,8,1/3\n".as_bytes()).is_err());
        assert!(McsTable::parse_csv("mcs_index,modulation_order,code_rate\n1,2,1/3\n".as_bytes()).is_err());
    }
}
