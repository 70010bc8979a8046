//! Simplified circular-buffer rate matching and the block bit interleaver.
//!
//! The circular buffer holds every codeword position except shortened
//! (filler) ones, in natural order, and is read from position zero. Reading
//! fewer bits than the buffer holds punctures the tail; reading more repeats
//! from the start, and the dematcher sums the repeated observations.

use super::{BitOrigin, LlrFrame, PhyError};

/// Transmission order of codeword positions for a given target length.
#[derive(Debug, Clone)]
pub struct CircularBuffer {
    n: usize,
    order: Vec<usize>,
}

impl CircularBuffer {
    pub fn new(n: usize, fillers: &[usize]) -> Result<Self, PhyError> {
        let mut skip = vec![false; n];
        for &f in fillers {
            if f >= n {
                return Err(PhyError::IndexOutOfRange { index: f, len: n });
            }
            skip[f] = true;
        }
        let order: Vec<usize> = (0..n).filter(|&i| !skip[i]).collect();
        if order.is_empty() {
            return Err(PhyError::LengthMismatch { expected: 1, got: 0 });
        }
        Ok(CircularBuffer { n, order })
    }

    pub fn codeword_len(&self) -> usize {
        self.n
    }

    /// Codeword index sent at each output position.
    pub fn positions(&self, target_len: usize) -> impl Iterator<Item = usize> + '_ {
        (0..target_len).map(move |i| self.order[i % self.order.len()])
    }

    pub fn select(&self, codeword: &[u8], target_len: usize) -> Result<Vec<u8>, PhyError> {
        if codeword.len() != self.n {
            return Err(PhyError::LengthMismatch { expected: self.n, got: codeword.len() });
        }
        Ok(self.positions(target_len).map(|p| codeword[p]).collect())
    }

    /// Restores a length-`n` frame; untransmitted positions read zero and are
    /// flagged punctured.
    pub fn restore(&self, llrs: &[f64]) -> LlrFrame {
        let mut values = vec![0.0; self.n];
        let mut origin = vec![BitOrigin::Punctured; self.n];
        for (l, p) in llrs.iter().zip(self.positions(llrs.len())) {
            values[p] += l;
            origin[p] = BitOrigin::Received;
        }
        LlrFrame { values, origin }
    }
}

/// Rate matching without shortening.
pub fn rate_match(codeword: &[u8], target_len: usize) -> Result<Vec<u8>, PhyError> {
    CircularBuffer::new(codeword.len(), &[])?.select(codeword, target_len)
}

/// Inverse of [`rate_match`] for a codeword of length `n`.
pub fn rate_dematch(llrs: &[f64], n: usize) -> Result<LlrFrame, PhyError> {
    Ok(CircularBuffer::new(n, &[])?.restore(llrs))
}

/// Row-write / column-read permutation: output index `i` takes input
/// `perm[i]`. Cells past the end of the last row are skipped.
fn block_permutation(len: usize, depth: usize) -> Vec<usize> {
    let depth = depth.max(1);
    let cols = len.div_ceil(depth);
    let mut perm = Vec::with_capacity(len);
    for c in 0..cols {
        for r in 0..depth {
            let idx = r * cols + c;
            if idx < len {
                perm.push(idx);
            }
        }
    }
    perm
}

pub fn interleave<T: Copy>(data: &[T], depth: usize) -> Vec<T> {
    block_permutation(data.len(), depth).into_iter().map(|i| data[i]).collect()
}

pub fn deinterleave<T: Copy + Default>(data: &[T], depth: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    for (i, src) in block_permutation(data.len(), depth).into_iter().enumerate() {
        out[src] = data[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn full_length_is_identity() {
        let cw = vec![1, 0, 1, 1, 0, 0, 1, 0];
        assert_eq!(rate_match(&cw, 8).unwrap(), cw);
        let llrs = [1.0, -2.0, 3.0, -4.0, 5.0, -6.0, 7.0, -8.0];
        let frame = rate_dematch(&llrs, 8).unwrap();
        assert_eq!(frame.values, llrs);
        assert!(frame.origin.iter().all(|&o| o == BitOrigin::Received));
    }

    #[test]
    fn tail_puncturing() {
        let llrs: Vec<f64> = (1..=12).map(f64::from).collect();
        let frame = rate_dematch(&llrs, 16).unwrap();
        assert_eq!(&frame.values[12..], &[0.0; 4]);
        assert!(frame.origin[12..].iter().all(|&o| o == BitOrigin::Punctured));
        assert_eq!(frame.origin.iter().filter(|&&o| o == BitOrigin::Punctured).count(), 4);
    }

    #[test]
    fn punctured_set_is_complement_of_transmitted() {
        let fillers = [3, 4, 10];
        let buf = CircularBuffer::new(20, &fillers).unwrap();
        for target in [5, 13, 17, 30] {
            let sent: BTreeSet<usize> = buf.positions(target).collect();
            let frame = buf.restore(&vec![1.0; target]);
            let punctured: BTreeSet<usize> =
                (0..20).filter(|&i| frame.origin[i] == BitOrigin::Punctured).collect();
            let complement: BTreeSet<usize> = (0..20).filter(|i| !sent.contains(i)).collect();
            assert_eq!(punctured, complement);
            assert!(fillers.iter().all(|f| punctured.contains(f)));
        }
    }

    #[test]
    fn repetition_sums_observations() {
        let frame = rate_dematch(&[1.0, 2.0, 3.0, 0.5, 0.25], 3).unwrap();
        assert_eq!(frame.values, vec![1.5, 2.25, 3.0]);
    }

    #[test]
    fn out_of_range_filler() {
        assert!(matches!(
            CircularBuffer::new(4, &[4]),
            Err(PhyError::IndexOutOfRange { index: 4, len: 4 })
        ));
        assert!(matches!(
            CircularBuffer::new(4, &[]).unwrap().select(&[0, 1], 2),
            Err(PhyError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn interleaver_round_trip() {
        let data: Vec<u32> = (0..23).collect();
        for depth in [1, 2, 4, 5] {
            let il = interleave(&data, depth);
            if depth > 1 {
                assert_ne!(il, data);
            }
            assert_eq!(deinterleave(&il, depth), data);
        }
        assert_eq!(interleave(&[0, 1, 2, 3, 4, 5], 2), vec![0, 3, 1, 4, 2, 5]);
    }
}
