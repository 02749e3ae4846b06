//! Polar code construction and encoding, `c = u · F^{⊗n} · B_N` over GF(2).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::{Error, Result};

/// 3GPP TS 38.212 Table 5.3.1.2-1: sub-channel indices of the length-1024
/// mother code, least reliable first.
const RELIABILITY_TABLE: &str = include_str!("../data/reliability_5g.txt");

pub const MAX_BLOCK_LENGTH: usize = 1024;

/// Universal 5G reliability sequence (length 1024, least reliable first).
pub fn reliability_sequence() -> Vec<usize> {
    RELIABILITY_TABLE
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().expect("bundled reliability table is numeric"))
        .collect()
}

/// A vector of bits stored one per byte, each 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Input(format!("entry {pos} is {} (bits must be 0 or 1)", bits[pos])));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl Deref for BitVector {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl TryFrom<Vec<u8>> for BitVector {
    type Error = Error;

    fn try_from(bits: Vec<u8>) -> Result<Self> {
        Self::new(bits)
    }
}

/// Reverses the lowest `bits` bits of `i`.
#[inline]
pub fn bit_reverse(i: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        i.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Applies the bit-reversal permutation: `out[k] = x[rev(k)]`.
pub fn bit_reversal_permute<T: Copy>(x: &[T]) -> Vec<T> {
    let bits = x.len().trailing_zeros();
    debug_assert!(x.len().is_power_of_two());
    (0..x.len()).map(|k| x[bit_reverse(k, bits)]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarCode {
    n: usize,
    k: usize,
    frozen: Vec<bool>,
    reliability: Vec<usize>,
    info_positions: Vec<usize>,
}

impl PolarCode {
    /// Freezes the `n − k` least reliable sub-channels of the 5G sequence
    /// restricted to indices below `n`.
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if !(2..=MAX_BLOCK_LENGTH).contains(&n) || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "block length {n} must be a power of two in 2..={MAX_BLOCK_LENGTH}"
            )));
        }
        if k > n {
            return Err(Error::Config(format!("information length {k} exceeds block length {n}")));
        }
        let reliability: Vec<usize> = reliability_sequence().into_iter().filter(|&i| i < n).collect();
        let mut frozen = vec![false; n];
        for &i in &reliability[..n - k] {
            frozen[i] = true;
        }
        let info_positions = (0..n).filter(|&i| !frozen[i]).collect();
        Ok(Self {
            n,
            k,
            frozen,
            reliability,
            info_positions,
        })
    }

    pub fn block_length(&self) -> usize {
        self.n
    }

    pub fn info_length(&self) -> usize {
        self.k
    }

    /// `log2(N)`.
    pub fn stages(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    /// `true` at frozen positions.
    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    /// Sub-channel indices `< N`, least reliable first.
    pub fn reliability_order(&self) -> &[usize] {
        &self.reliability
    }

    /// Non-frozen positions in increasing index order.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    /// Places `info` on the non-frozen positions of an all-zero `u`.
    pub fn embed(&self, info: &[u8]) -> Result<BitVector> {
        if info.len() != self.k {
            return Err(Error::Length {
                expected: self.k,
                actual: info.len(),
            });
        }
        let mut u = vec![0u8; self.n];
        for (&p, &b) in self.info_positions.iter().zip(info) {
            u[p] = b;
        }
        BitVector::new(u)
    }

    /// Entries of `u_hat` at the non-frozen positions.
    pub fn extract_info(&self, u_hat: &[u8]) -> Result<BitVector> {
        if u_hat.len() != self.n {
            return Err(Error::Length {
                expected: self.n,
                actual: u_hat.len(),
            });
        }
        BitVector::new(self.info_positions.iter().map(|&p| u_hat[p]).collect())
    }

    /// Butterfly encoding followed by bit-reversal of the output.
    pub fn encode(&self, u: &[u8]) -> Result<BitVector> {
        if u.len() != self.n {
            return Err(Error::Length {
                expected: self.n,
                actual: u.len(),
            });
        }
        let mut x = u.to_vec();
        butterfly(&mut x);
        BitVector::new(bit_reversal_permute(&x))
    }
}

/// In-place `x ← x · F^{⊗n}` (natural order).
pub(crate) fn butterfly(x: &mut [u8]) {
    let n = x.len();
    let mut half = n / 2;
    while half >= 1 {
        for block in (0..n).step_by(2 * half) {
            for j in block..block + half {
                x[j] ^= x[j + half];
            }
        }
        half /= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_a_permutation() {
        let mut seq = reliability_sequence();
        assert_eq!(seq.len(), 1024);
        assert_eq!(&seq[..8], &[0, 1, 2, 4, 8, 16, 32, 3]);
        seq.sort_unstable();
        assert!(seq.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn paper_code_freezes_half() {
        let code = PolarCode::new(64, 32).unwrap();
        assert_eq!(code.frozen_mask().iter().filter(|&&f| f).count(), 32);
        assert_eq!(code.info_positions().len(), 32);
        for &i in &code.reliability_order()[..32] {
            assert!(code.frozen_mask()[i]);
        }
    }

    #[test]
    fn full_rate_has_no_frozen_bits() {
        let code = PolarCode::new(16, 16).unwrap();
        assert!(code.frozen_mask().iter().all(|f| !f));
    }

    #[test]
    fn n8_k4_frozen_set_from_table() {
        // indices < 8 in table order: 0 1 2 4 3 5 6 7
        let code = PolarCode::new(8, 4).unwrap();
        assert_eq!(code.reliability_order(), &[0, 1, 2, 4, 3, 5, 6, 7]);
        let frozen: Vec<usize> = (0..8).filter(|&i| code.frozen_mask()[i]).collect();
        assert_eq!(frozen, vec![0, 1, 2, 4]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(PolarCode::new(3, 1), Err(Error::Config(_))));
        assert!(matches!(PolarCode::new(1, 0), Err(Error::Config(_))));
        assert!(matches!(PolarCode::new(2048, 4), Err(Error::Config(_))));
        assert!(matches!(PolarCode::new(8, 9), Err(Error::Config(_))));
    }

    #[test]
    fn embed_and_extract() {
        // N=4, K=2: table restricted to <4 is 0 1 2 3, so {0,1} are frozen
        let code = PolarCode::new(4, 2).unwrap();
        assert_eq!(&*code.embed(&[1, 0]).unwrap(), &[0, 0, 1, 0]);
        assert_eq!(&*code.extract_info(&[1, 1, 0, 1]).unwrap(), &[0, 1]);

        let none = PolarCode::new(8, 0).unwrap();
        assert_eq!(&*none.embed(&[]).unwrap(), &[0; 8]);
        assert!(none.extract_info(&[1; 8]).unwrap().is_empty());

        let full = PolarCode::new(4, 4).unwrap();
        assert_eq!(&*full.embed(&[1, 0, 1, 1]).unwrap(), &[1, 0, 1, 1]);

        assert!(matches!(code.embed(&[1]), Err(Error::Length { .. })));
        assert!(matches!(code.extract_info(&[1; 3]), Err(Error::Length { .. })));
        assert!(matches!(code.encode(&[1; 5]), Err(Error::Length { .. })));
    }

    #[test]
    fn n4_last_row_of_generator() {
        let code = PolarCode::new(4, 4).unwrap();
        assert_eq!(&*code.encode(&[0, 0, 0, 1]).unwrap(), &[1, 1, 1, 1]);
        assert_eq!(&*code.encode(&[0; 4]).unwrap(), &[0; 4]);
    }

    #[test]
    fn bit_reversal_is_an_involution() {
        let x: Vec<usize> = (0..64).collect();
        assert_eq!(bit_reversal_permute(&bit_reversal_permute(&x)), x);
        assert_eq!(bit_reverse(1, 3), 4);
        assert_eq!(bit_reverse(6, 3), 3);
    }

    #[test]
    fn bitvector_rejects_non_binary() {
        assert!(BitVector::new(vec![0, 1, 2]).is_err());
    }
}
