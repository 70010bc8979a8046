//! Pseudo-random scrambling with a 31-stage Fibonacci LFSR.
//!
//! The register obeys `x(n + 31) = x(n + 3) ⊕ x(n)` (polynomial
//! `x^31 + x^3 + 1`) and is loaded with the seed, bit `i` of the seed being
//! `x(i)`. A zero seed yields the all-zero sequence.

pub const LFSR_WIDTH: u32 = 31;
const TAP: u32 = 3;

#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u32,
}

impl Lfsr {
    /// Only the low 31 bits of `seed` are used.
    pub fn new(seed: u32) -> Self {
        Lfsr { state: seed & ((1 << LFSR_WIDTH) - 1) }
    }

    pub fn next_bit(&mut self) -> u8 {
        let out = self.state & 1;
        let feedback = (self.state ^ (self.state >> TAP)) & 1;
        self.state = (self.state >> 1) | (feedback << (LFSR_WIDTH - 1));
        out as u8
    }
}

pub fn scrambling_sequence(seed: u32, len: usize) -> Vec<u8> {
    let mut lfsr = Lfsr::new(seed);
    (0..len).map(|_| lfsr.next_bit()).collect()
}

/// XORs hard bits with the sequence; applying it twice is the identity.
pub fn scramble_bits(bits: &mut [u8], seed: u32) {
    let mut lfsr = Lfsr::new(seed);
    for b in bits {
        *b ^= lfsr.next_bit();
    }
}

/// Flips the sign of each LLR where the sequence is one, which undoes
/// [`scramble_bits`] in the soft domain.
pub fn scramble_llrs(llrs: &mut [f64], seed: u32) {
    let mut lfsr = Lfsr::new(seed);
    for l in llrs {
        if lfsr.next_bit() == 1 {
            *l = -*l;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn register_trace() {
        // Seed 0b1011 puts x(0..4) = 1,1,0,1 and zeros up to x(30).
        // x(31) = x(3) ^ x(0) = 0, x(32) = x(4) ^ x(1) = 1,
        // x(33) = x(5) ^ x(2) = 0, x(34) = x(6) ^ x(3) = 1.
        let mut x = vec![0u8; 40];
        for (i, xi) in x.iter_mut().enumerate().take(31) {
            *xi = ((0b1011u32 >> i) & 1) as u8;
        }
        for n in 0..(40 - 31) {
            x[n + 31] = x[n + 3] ^ x[n];
        }
        assert_eq!(&x[31..35], &[0, 1, 0, 1]);
        assert_eq!(scrambling_sequence(0b1011, 8), vec![1, 1, 0, 1, 0, 0, 0, 0]);
        assert_eq!(scrambling_sequence(0b1011, 40), x);
    }

    #[test]
    fn zero_seed_is_identity() {
        let mut bits = vec![1, 0, 1, 1, 0];
        scramble_bits(&mut bits, 0);
        assert_eq!(bits, vec![1, 0, 1, 1, 0]);
    }

    #[test]
    fn involution_on_bits_and_llrs() {
        let mut rng = crate::seed::rng(9);
        let bits: Vec<u8> = (0..500).map(|_| rng.random_range(0..2)).collect();
        let llrs: Vec<f64> = (0..500).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut b = bits.clone();
        scramble_bits(&mut b, 12345);
        assert_ne!(b, bits);
        scramble_bits(&mut b, 12345);
        assert_eq!(b, bits);
        let mut l = llrs.clone();
        scramble_llrs(&mut l, 777);
        scramble_llrs(&mut l, 777);
        assert_eq!(l, llrs);
    }
}
