use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use super::SnrFeature;
use crate::nn::{Activation, NetworkParams, Parameterized, Tape, Tensor, Var};
use crate::{Error, Result, LLR_CLIP};

/// Width of the per-symbol demapper input `[Re z, Im z, snr]`, `z = y/h`.
///
/// Logits are the network output weighted by the channel gain `|h|²`, the
/// factorization max-log LLRs have under flat fading.
pub const DEMAPPER_FEATURES: usize = 3;

/// Floor on `|h|²` before equalization.
const MIN_GAIN: f64 = 1e-12;

/// Whether the demapper sees the channel coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    #[default]
    Perfect,
    /// Coefficients taken as `1 + 0j`.
    None,
}

/// AE-demapper producing one logit `ℓ_j` per bit with `P(bit_j = 1) = σ(ℓ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demapper {
    pub net: NetworkParams,
    pub bits_per_symbol: usize,
    pub csi: CsiMode,
    pub snr: SnrFeature,
}

impl Demapper {
    pub fn new(
        bits_per_symbol: usize,
        hidden: &[usize],
        csi: CsiMode,
        snr: SnrFeature,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        if bits_per_symbol == 0 {
            return Err(Error::Config("demapper needs at least one bit per symbol".into()));
        }
        let mut widths = vec![DEMAPPER_FEATURES];
        widths.extend_from_slice(hidden);
        widths.push(bits_per_symbol);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Linear);
        Ok(Self {
            net: NetworkParams::init(&widths, &acts, rng)?,
            bits_per_symbol,
            csi,
            snr,
        })
    }

    pub fn from_parts(net: NetworkParams, bits_per_symbol: usize, csi: CsiMode, snr: SnrFeature) -> Result<Self> {
        if net.input_width() != DEMAPPER_FEATURES || net.output_width() != bits_per_symbol {
            return Err(Error::Config(format!(
                "demapper network maps {} -> {}, expected {DEMAPPER_FEATURES} -> {bits_per_symbol}",
                net.input_width(),
                net.output_width()
            )));
        }
        Ok(Self {
            net,
            bits_per_symbol,
            csi,
            snr,
        })
    }

    /// Per-symbol `(1/h, |h|²)` as seen by the demapper, `1/h` interleaved.
    fn equalizer(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.csi {
            CsiMode::Perfect => {
                let gain: Vec<f64> = h.chunks_exact(2).map(|c| c[0] * c[0] + c[1] * c[1]).collect();
                let inv = h
                    .chunks_exact(2)
                    .zip(&gain)
                    .flat_map(|(c, &g)| {
                        let g = g.max(MIN_GAIN);
                        [c[0] / g, -c[1] / g]
                    })
                    .collect();
                (inv, gain)
            }
            CsiMode::None => (
                h.chunks_exact(2).flat_map(|_| [1.0, 0.0]).collect(),
                vec![1.0; h.len() / 2],
            ),
        }
    }

    /// Feature rows for interleaved data-branch symbols `y` and coefficients `h`.
    pub fn features(&self, y: &[f64], h: &[f64], snr: f64) -> Vec<f64> {
        let s = self.snr.value(snr);
        let (inv, _) = self.equalizer(h);
        let mut f = Vec::with_capacity(y.len() / 2 * DEMAPPER_FEATURES);
        for (y, h) in y.chunks_exact(2).zip(inv.chunks_exact(2)) {
            let (yr, yi, hr, hi) = (y[0], y[1], h[0], h[1]);
            f.extend_from_slice(&[hr * yr - hi * yi, hr * yi + hi * yr, s]);
        }
        f
    }

    /// Per-symbol logits, row-major (symbols × bits).
    pub fn logits(&self, y: &[f64], h: &[f64], snr: f64) -> Result<Vec<f64>> {
        self.check(y, h)?;
        let raw = self.net.eval(&self.features(y, h, snr), y.len() / 2)?;
        let (_, gain) = self.equalizer(h);
        let bps = self.bits_per_symbol;
        Ok(raw.iter().enumerate().map(|(i, &l)| gain[i / bps] * l).collect())
    }

    /// Logits on `tape` for the differentiable symbols `y` (rows × 2).
    pub fn forward(&self, tape: &mut Tape, y: Var, h: &[f64], snr: f64, slot_base: Option<usize>) -> Result<Var> {
        let (rows, cols) = tape.shape(y);
        if cols != 2 || h.len() != 2 * rows {
            return Err(Error::Shape {
                op: "demapper_forward",
                expected: format!("{rows}x2 symbols with {} CSI values", 2 * rows),
                actual: format!("{rows}x{cols} with {}", h.len()),
            });
        }
        let s = self.snr.value(snr);
        let (inv, gain) = self.equalizer(h);
        let z = tape.complex_mul(y, inv)?;
        let side = tape.constant(rows, 1, vec![s; rows]);
        let feats = tape.concat_cols(z, side)?;
        let raw = self.net.forward(tape, feats, slot_base)?;
        let bps = self.bits_per_symbol;
        let weights = tape.constant(rows, bps, gain.iter().flat_map(|&g| core::iter::repeat_n(g, bps)).collect());
        tape.mul(raw, weights)
    }

    fn check(&self, y: &[f64], h: &[f64]) -> Result<()> {
        if y.len() % 2 != 0 || h.len() != y.len() {
            return Err(Error::Length {
                expected: y.len(),
                actual: h.len(),
            });
        }
        Ok(())
    }

    pub fn slot_count(&self) -> usize {
        self.net.slot_count()
    }
}

impl Parameterized for Demapper {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.net.params_mut()
    }
}

/// Channel LLRs `clip(−ℓ)`: positive means bit 0.
pub fn logits_to_channel_llrs(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&l| (-l).clamp(-LLR_CLIP, LLR_CLIP)).collect()
}
