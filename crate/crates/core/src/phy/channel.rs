use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Complex symbols stored interleaved `[re0, im0, re1, im1, …]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymbolBlock {
    pub values: Vec<f64>,
}

impl SymbolBlock {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(Error::Input("interleaved symbol buffer has odd length".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `‖y‖² = Σ |y_i|²`.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

/// Per-component noise variance `σ² = 1/(2γ)` for linear SNR `γ`.
pub fn noise_variance(snr: f64) -> f64 {
    1.0 / (2.0 * snr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Interleaved complex coefficients, one per symbol.
    pub h: Vec<f64>,
    pub noise_variance: f64,
    pub snr: f64,
}

impl ChannelRealization {
    /// Draws coefficients for `symbols` symbols: `h ≡ 1` for AWGN, i.i.d.
    /// CN(0, 1) for Rayleigh.
    pub fn draw(kind: ChannelKind, snr: f64, symbols: usize, rng: &mut impl RngCore) -> Result<Self> {
        if !(snr > 0.0) {
            return Err(Error::Config(format!("SNR must be positive, got {snr}")));
        }
        let h = match kind {
            ChannelKind::Awgn => (0..symbols).flat_map(|_| [1.0, 0.0]).collect(),
            ChannelKind::Rayleigh => {
                let s = core::f64::consts::FRAC_1_SQRT_2;
                (0..2 * symbols)
                    .map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                    .collect()
            }
        };
        Ok(Self {
            h,
            noise_variance: noise_variance(snr),
            snr,
        })
    }

    /// Noise-free channel with the given coefficients.
    pub fn noiseless(h: Vec<f64>) -> Self {
        Self {
            h,
            noise_variance: 0.0,
            snr: f64::INFINITY,
        }
    }
}

/// Draws i.i.d. real Gaussian samples of variance `variance`.
pub fn gaussian_noise(len: usize, variance: f64, rng: &mut impl RngCore) -> Vec<f64> {
    let s = libm::sqrt(variance);
    (0..len)
        .map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Complex product `h ⊙ x` on interleaved buffers.
pub fn fade(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() / 2 {
        let (xr, xi, hr, hi) = (x[2 * i], x[2 * i + 1], h[2 * i], h[2 * i + 1]);
        out[2 * i] = hr * xr - hi * xi;
        out[2 * i + 1] = hr * xi + hi * xr;
    }
    out
}

/// `y = h ⊙ x + n`, `n` with per-component variance `σ²`.
pub fn apply_channel(x: &SymbolBlock, ch: &ChannelRealization, rng: &mut impl RngCore) -> Result<SymbolBlock> {
    if ch.h.len() != x.values.len() {
        return Err(Error::Length {
            expected: x.values.len(),
            actual: ch.h.len(),
        });
    }
    let mut y = fade(&x.values, &ch.h);
    if ch.noise_variance > 0.0 {
        for (v, n) in y.iter_mut().zip(gaussian_noise(x.values.len(), ch.noise_variance, rng)) {
            *v += n;
        }
    }
    Ok(SymbolBlock { values: y })
}

pub fn check_split(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("power splitting factor {rho} outside [0, 1]")));
    }
    Ok(())
}

/// Power splitter: `(√ρ·y, √(1−ρ)·y)`.
pub fn split_power(y: &SymbolBlock, rho: f64) -> Result<(SymbolBlock, SymbolBlock)> {
    check_split(rho)?;
    let (a, b) = (libm::sqrt(rho), libm::sqrt(1.0 - rho));
    Ok((
        SymbolBlock {
            values: y.values.iter().map(|v| a * v).collect(),
        },
        SymbolBlock {
            values: y.values.iter().map(|v| b * v).collect(),
        },
    ))
}
