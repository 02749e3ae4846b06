//! Slow, direct implementations kept as test oracles for the polar encoder
//! and the BP decoder.

use alloc::vec;
use alloc::vec::Vec;

use crate::polar::PolarCode;
use crate::{FROZEN_LLR, LLR_CLIP};

/// Dense `G_N = F^{⊗n} · B_N` over GF(2), row-major `N×N`.
pub fn generator_matrix(n: usize) -> Vec<Vec<u8>> {
    assert!(n.is_power_of_two() && n >= 1);
    let mut g = vec![vec![1u8]];
    while g.len() < n {
        // F ⊗ G with F = [[1, 0], [1, 1]]
        let m = g.len();
        let mut next = vec![vec![0u8; 2 * m]; 2 * m];
        for r in 0..m {
            for c in 0..m {
                next[r][c] = g[r][c];
                next[m + r][c] = g[r][c];
                next[m + r][m + c] = g[r][c];
            }
        }
        g = next;
    }
    let bits = n.trailing_zeros();
    let rev = |mut i: usize| {
        let mut out = 0;
        for _ in 0..bits {
            out = (out << 1) | (i & 1);
            i >>= 1;
        }
        out
    };
    // right-multiplying by the permutation matrix B_N moves column rev(k) to k
    g.iter().map(|row| (0..n).map(|k| row[rev(k)]).collect()).collect()
}

/// `u · G` over GF(2).
pub fn dense_encode(g: &[Vec<u8>], u: &[u8]) -> Vec<u8> {
    let n = g.len();
    let mut c = vec![0u8; n];
    for (r, &bit) in u.iter().enumerate() {
        if bit == 1 {
            for k in 0..n {
                c[k] ^= g[r][k];
            }
        }
    }
    c
}

fn min_sum(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let m = if a.abs() < b.abs() { a.abs() } else { b.abs() };
    if (a < 0.0) != (b < 0.0) {
        -m
    } else {
        m
    }
}

fn clip(x: f64) -> f64 {
    if x > LLR_CLIP {
        LLR_CLIP
    } else if x < -LLR_CLIP {
        -LLR_CLIP
    } else {
        x
    }
}

/// Classic (`α = β = 1`) min-sum BP on the polar factor graph, written out
/// node by node on `(log2 N + 1) × N` message tables.
pub struct ReferenceBp {
    n: usize,
    stages: usize,
    frozen: Vec<bool>,
    iterations: usize,
}

impl ReferenceBp {
    pub fn new(code: &PolarCode, iterations: usize) -> Self {
        Self {
            n: code.block_length(),
            stages: code.stages(),
            frozen: code.frozen_mask().to_vec(),
            iterations,
        }
    }

    /// Processing elements `(upper, lower)` of stage `i`.
    fn elements(&self, i: usize) -> Vec<(usize, usize)> {
        let span = self.n >> (i + 1);
        (0..self.n).filter(|j| j & span == 0).map(|j| (j, j | span)).collect()
    }

    pub fn decision_llrs(&self, llrs: &[f64]) -> Vec<f64> {
        let (n, st) = (self.n, self.stages);
        let mut l = vec![vec![0.0; n]; st + 1];
        let mut r = vec![vec![0.0; n]; st + 1];
        let bits = st as u32;
        for (j, slot) in l[st].iter_mut().enumerate() {
            let src = if bits == 0 { 0 } else { j.reverse_bits() >> (usize::BITS - bits) };
            *slot = clip(llrs[src]);
        }
        for j in 0..n {
            if self.frozen[j] {
                r[0][j] = FROZEN_LLR;
            }
        }
        for _ in 0..self.iterations {
            for i in (0..st).rev() {
                for (a, b) in self.elements(i) {
                    let up = min_sum(l[i + 1][a], l[i + 1][b] + r[i][b]);
                    let down = min_sum(r[i][a], l[i + 1][a]) + l[i + 1][b];
                    l[i][a] = clip(up);
                    l[i][b] = clip(down);
                }
            }
            for i in 0..st {
                for (a, b) in self.elements(i) {
                    let up = min_sum(r[i][a], l[i + 1][b] + r[i][b]);
                    let down = min_sum(r[i][a], l[i + 1][a]) + r[i][b];
                    r[i + 1][a] = clip(up);
                    r[i + 1][b] = clip(down);
                }
            }
        }
        (0..n).map(|j| l[0][j] + r[0][j]).collect()
    }

    pub fn decode(&self, llrs: &[f64]) -> Vec<u8> {
        self.decision_llrs(llrs).iter().map(|&d| u8::from(d < 0.0)).collect()
    }
}
