//! Link-level LDPC simulation with pluggable check-node kernels, plus the
//! machinery that evolves those kernels: a sandboxed kernel language, a
//! hierarchical scoring protocol and an island-model program database.
//!
//! Module map:
//!
//! * [`tanner`]: quasi-cyclic codes, Tanner graphs and systematic encoding.
//! * [`phy`]: transport blocks, CRC, segmentation, rate matching, scrambling,
//!   interleaving, modulation, AWGN and soft demapping.
//! * [`decoder`]: flooding belief propagation with CRC early stopping.
//! * [`kernels`]: the check-node update zoo and the kernel registry.
//! * [`kernelscript`]: the candidate language (parser, interpreter, mutator).
//! * [`scoring`]: scalar scores, boundary-context selection, kernel benches.
//! * [`evolution`]: islands, clusters, sampling, genetic reset, event log.

pub mod decoder;
pub mod evolution;
pub mod kernels;
pub mod kernelscript;
pub mod phy;
pub mod scoring;
pub mod seed;
pub mod tanner;

/// Hard bits are stored one per byte, each `0` or `1`.
pub type Bits = Vec<u8>;
