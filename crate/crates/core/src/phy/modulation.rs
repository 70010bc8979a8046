//! Gray-mapped constellations, complex AWGN and max-log soft demapping.
//!
//! LLR sign convention: positive means bit 0 is more likely.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PhyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
}

impl Modulation {
    /// Constellation size: 2, 4 or 16.
    pub fn order(self) -> usize {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
            Modulation::Qam16 => 16,
        }
    }

    pub fn from_order(order: usize) -> Option<Self> {
        match order {
            2 => Some(Modulation::Bpsk),
            4 => Some(Modulation::Qpsk),
            16 => Some(Modulation::Qam16),
            _ => None,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.order().trailing_zeros() as usize
    }

    /// Unit-energy symbol for the given bit group (first bit first).
    pub fn map(self, bits: &[u8]) -> Complex64 {
        let s = |b: u8| 1.0 - 2.0 * f64::from(b & 1);
        match self {
            Modulation::Bpsk => Complex64::new(s(bits[0]), 0.0),
            Modulation::Qpsk => Complex64::new(s(bits[0]), s(bits[1])) / 2f64.sqrt(),
            Modulation::Qam16 => {
                Complex64::new(s(bits[0]) * (2.0 - s(bits[2])), s(bits[1]) * (2.0 - s(bits[3])))
                    / 10f64.sqrt()
            }
        }
    }

    /// Every constellation point paired with its label, label bit `i` being
    /// bit `i` of the group.
    pub fn constellation(self) -> Vec<(u32, Complex64)> {
        let q = self.bits_per_symbol();
        (0..self.order() as u32)
            .map(|label| {
                let bits: Vec<u8> = (0..q).map(|i| ((label >> i) & 1) as u8).collect();
                (label, self.map(&bits))
            })
            .collect()
    }
}

pub fn modulate(bits: &[u8], modulation: Modulation) -> Result<Vec<Complex64>, PhyError> {
    let q = modulation.bits_per_symbol();
    if bits.len() % q != 0 {
        return Err(PhyError::BadLength { len: bits.len(), multiple: q });
    }
    Ok(bits.chunks(q).map(|c| modulation.map(c)).collect())
}

/// Per-real-dimension noise variance for unit symbol energy.
pub fn noise_var_per_dim(snr_db: f64) -> f64 {
    0.5 * 10f64.powf(-snr_db / 10.0)
}

/// Adds complex white Gaussian noise. The unit normal draws depend only on
/// the seed, so two SNRs with the same seed see scaled copies of one noise
/// realisation.
pub fn awgn(symbols: &[Complex64], snr_db: f64, seed: u64) -> Vec<Complex64> {
    let sigma = noise_var_per_dim(snr_db).sqrt();
    let mut rng = crate::seed::rng(seed);
    symbols
        .iter()
        .map(|&s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(re, im) * sigma
        })
        .collect()
}

/// Max-log LLRs, `(min_{b=1} |y-s|² − min_{b=0} |y-s|²) / (2σ²)` per bit,
/// where `noise_var` is σ² per real dimension. Exact for BPSK and QPSK.
pub fn demap(noisy: &[Complex64], modulation: Modulation, noise_var: f64) -> Result<Vec<f64>, PhyError> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(PhyError::NonPositiveNoise(noise_var));
    }
    let q = modulation.bits_per_symbol();
    let points = modulation.constellation();
    let mut out = Vec::with_capacity(noisy.len() * q);
    let mut best = vec![[f64::INFINITY; 2]; q];
    for &y in noisy {
        best.iter_mut().for_each(|b| *b = [f64::INFINITY; 2]);
        for &(label, s) in &points {
            let d = (y - s).norm_sqr();
            for (i, b) in best.iter_mut().enumerate() {
                let bit = ((label >> i) & 1) as usize;
                if d < b[bit] {
                    b[bit] = d;
                }
            }
        }
        out.extend(best.iter().map(|b| (b[1] - b[0]) / (2.0 * noise_var)));
    }
    Ok(out)
}
