//! Bitwise CRC over GF(2), MSB first, no reflection, no output XOR.

use serde::{Deserialize, Serialize};

/// A CRC generator: `poly` holds the coefficients below the implicit
/// leading `x^width` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrcSpec {
    pub width: u32,
    pub poly: u32,
    pub init: u32,
}

impl CrcSpec {
    /// CRC-16/CCITT-FALSE: x^16 + x^12 + x^5 + 1, register preset to ones.
    pub const CCITT_FALSE: CrcSpec = CrcSpec { width: 16, poly: 0x1021, init: 0xFFFF };
    /// CRC-24A of the NR transport channel.
    pub const CRC24A: CrcSpec = CrcSpec { width: 24, poly: 0x0086_4CFB, init: 0 };

    pub fn len(&self) -> usize {
        self.width as usize
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0
    }

    fn mask(&self) -> u32 {
        if self.width == 32 {
            u32::MAX
        } else {
            (1u32 << self.width) - 1
        }
    }

    /// Remainder register after shifting `bits` through the divider.
    pub fn register(&self, bits: &[u8]) -> u32 {
        let top = 1u32 << (self.width - 1);
        let mask = self.mask();
        let mut reg = self.init & mask;
        for &b in bits {
            let feedback = ((reg & top) != 0) ^ (b & 1 == 1);
            reg = (reg << 1) & mask;
            if feedback {
                reg ^= self.poly & mask;
            }
        }
        reg
    }
}

/// CRC bits of `bits`, most significant first. Appending them makes the
/// whole sequence divide evenly: `crc_compute(bits ‖ crc) == 0`.
pub fn crc_compute(bits: &[u8], spec: &CrcSpec) -> Vec<u8> {
    let reg = spec.register(bits);
    (0..spec.width).rev().map(|i| ((reg >> i) & 1) as u8).collect()
}

/// True when `bits` (payload followed by its CRC) leaves a zero remainder.
pub fn crc_check(bits: &[u8], spec: &CrcSpec) -> bool {
    bits.len() >= spec.len() && spec.register(bits) == 0
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Textbook polynomial long division with the preset folded into the
    /// first `width` message bits.
    fn long_division(bits: &[u8], spec: &CrcSpec) -> u32 {
        let w = spec.len();
        let mut msg: Vec<u8> = bits.to_vec();
        msg.extend(std::iter::repeat_n(0, w));
        // The preset lands on the first `width` positions of the augmented
        // message, spilling into the appended zeros for short messages.
        for (i, m) in msg.iter_mut().enumerate().take(w) {
            *m ^= ((spec.init >> (w - 1 - i)) & 1) as u8;
        }
        let mut divisor = vec![1u8];
        divisor.extend((0..w).rev().map(|i| ((spec.poly >> i) & 1) as u8));
        for i in 0..bits.len() {
            if msg[i] == 1 {
                for (j, d) in divisor.iter().enumerate() {
                    msg[i + j] ^= d;
                }
            }
        }
        msg[bits.len()..].iter().fold(0u32, |acc, &b| (acc << 1) | b as u32)
    }

    #[test]
    fn ccitt_false_check_value() {
        let bits = bytes_to_bits(b"123456789");
        assert_eq!(CrcSpec::CCITT_FALSE.register(&bits), 0x29B1);
        assert_eq!(long_division(&bits, &CrcSpec::CCITT_FALSE), 0x29B1);
    }

    #[test]
    fn empty_payload_leaves_the_preset() {
        assert_eq!(CrcSpec::CCITT_FALSE.register(&[]), 0xFFFF);
        assert_eq!(long_division(&[], &CrcSpec::CCITT_FALSE), 0xFFFF);
        assert_eq!(crc_compute(&[], &CrcSpec::CCITT_FALSE), vec![1; 16]);
    }

    #[test]
    fn matches_long_division_and_appends_to_zero() {
        let mut rng = crate::seed::rng(1);
        for spec in [CrcSpec::CCITT_FALSE, CrcSpec::CRC24A] {
            for _ in 0..200 {
                let len = rng.random_range(1..300);
                let bits: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
                assert_eq!(spec.register(&bits), long_division(&bits, &spec));
                let mut framed = bits.clone();
                framed.extend(crc_compute(&bits, &spec));
                assert!(crc_check(&framed, &spec));
                framed[0] ^= 1;
                assert!(!crc_check(&framed, &spec));
            }
        }
    }
}
