use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `M` complex points stored row-major as an M×2 matrix `[re, im]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<f64>,
}

impl Constellation {
    /// Wraps raw points without rescaling.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        let m = points.len() / 2;
        if points.len() % 2 != 0 || m < 2 || !m.is_power_of_two() {
            return Err(Error::Config(format!(
                "constellation needs a power-of-two number (>= 2) of complex points, got {} reals",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("constellation has non-finite points".into()));
        }
        Ok(Self { points })
    }

    /// Scales `points` to unit mean power.
    pub fn normalized(points: Vec<f64>) -> Result<Self> {
        let mut c = Self::new(points)?;
        let p = c.mean_power();
        if !(p > 0.0) {
            return Err(Error::Input("cannot normalize an all-zero constellation".into()));
        }
        let s = 1.0 / libm::sqrt(p);
        c.points.iter_mut().for_each(|v| *v *= s);
        Ok(c)
    }

    /// Gray-labelled M-PSK; label `gray(p)` sits at angle `2πp/M`.
    pub fn psk(m: usize) -> Result<Self> {
        check_order(m)?;
        let mut pts = vec![0.0; 2 * m];
        for p in 0..m {
            let label = gray(p);
            let phi = 2.0 * PI * p as f64 / m as f64;
            pts[2 * label] = libm::cos(phi);
            pts[2 * label + 1] = libm::sin(phi);
        }
        Self::new(pts)
    }

    /// Gray-labelled rectangular QAM. The leading `ceil(m/2)` label bits
    /// select the in-phase level, the rest the quadrature level; M=8 is a
    /// 4×2 grid.
    pub fn qam(m: usize) -> Result<Self> {
        check_order(m)?;
        if m < 4 {
            return Err(Error::Config(format!("QAM needs M >= 4, got {m}")));
        }
        let bits = m.trailing_zeros() as usize;
        let (bi, bq) = (bits.div_ceil(2), bits / 2);
        let (li, lq) = (1usize << bi, 1usize << bq);
        let mut pts = vec![0.0; 2 * m];
        for pi in 0..li {
            for pq in 0..lq {
                let label = (gray(pi) << bq) | gray(pq);
                pts[2 * label] = (2 * pi) as f64 - (li - 1) as f64;
                pts[2 * label + 1] = (2 * pq) as f64 - (lq - 1) as f64;
            }
        }
        Self::normalized(pts)
    }

    pub fn order(&self) -> usize {
        self.points.len() / 2
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order().trailing_zeros() as usize
    }

    pub fn point(&self, k: usize) -> (f64, f64) {
        (self.points[2 * k], self.points[2 * k + 1])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|v| v * v).sum::<f64>() / self.order() as f64
    }

    pub fn records(&self) -> Vec<ConstellationRecord> {
        let bps = self.bits_per_symbol();
        (0..self.order())
            .map(|k| {
                let (re, im) = self.point(k);
                ConstellationRecord {
                    index: k,
                    label_bits: label_string(k, bps),
                    re,
                    im,
                }
            })
            .collect()
    }
}

fn check_order(m: usize) -> Result<()> {
    if m < 2 || !m.is_power_of_two() || m > 1 << 16 {
        return Err(Error::Config(format!("unsupported modulation order {m}")));
    }
    Ok(())
}

#[inline]
pub fn gray(p: usize) -> usize {
    p ^ (p >> 1)
}

/// MSB-first binary label of `k` over `bits` digits.
pub fn label_string(k: usize, bits: usize) -> String {
    (0..bits).rev().map(|b| if (k >> b) & 1 == 1 { '1' } else { '0' }).collect()
}

/// One exported constellation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationRecord {
    pub index: usize,
    pub label_bits: String,
    pub re: f64,
    pub im: f64,
}

/// Symbol indices of consecutive MSB-first groups of `bits` bits.
pub fn symbol_indices(c: &[u8], bits: usize) -> Result<Vec<usize>> {
    if bits == 0 || c.len() % bits != 0 {
        return Err(Error::Length {
            expected: c.len().div_ceil(bits.max(1)) * bits.max(1),
            actual: c.len(),
        });
    }
    Ok(c.chunks_exact(bits)
        .map(|g| g.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b)))
        .collect())
}

/// Number of zero bits appended so that `len` splits into whole symbols.
pub fn pad_length(len: usize, bits: usize) -> usize {
    (bits - len % bits) % bits
}

/// `c` followed by zero pad bits up to a multiple of `bits`.
pub fn pad_bits(c: &[u8], bits: usize) -> Vec<u8> {
    let mut out = c.to_vec();
    out.resize(c.len() + pad_length(c.len(), bits), 0);
    out
}

/// Row-major one-hot matrix (rows = symbols, cols = M).
pub fn one_hot(indices: &[usize], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; indices.len() * m];
    for (r, &k) in indices.iter().enumerate() {
        out[r * m + k] = 1.0;
    }
    out
}
