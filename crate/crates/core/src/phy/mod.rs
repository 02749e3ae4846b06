//! Transmit/receive physical layer: learned mapper and demapper, channel,
//! power splitter and conventional Gray-mapped baselines.

mod baseline;
mod channel;
mod constellation;
mod demapper;
mod mapper;

use serde::{Deserialize, Serialize};

pub use baseline::{max_log_llrs, Modulation};
pub use channel::{
    apply_channel, check_split, fade, gaussian_noise, noise_variance, split_power, ChannelKind, ChannelRealization,
    SymbolBlock,
};
pub use constellation::{
    gray, label_string, one_hot, pad_bits, pad_length, symbol_indices, Constellation, ConstellationRecord,
};
pub use demapper::{logits_to_channel_llrs, CsiMode, Demapper, DEMAPPER_FEATURES};
pub use mapper::Mapper;

/// Standardized SNR input `(γ_dB − mid_db) / span_db` shared by the mapper
/// and the demapper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrFeature {
    pub mid_db: f64,
    pub span_db: f64,
}

impl SnrFeature {
    /// Centres on the range of `snrs_db`; a single SNR gets a 10 dB span.
    pub fn from_range(snrs_db: &[f64]) -> Self {
        let lo = snrs_db.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = snrs_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Self::default();
        }
        let span = hi - lo;
        Self {
            mid_db: 0.5 * (lo + hi),
            span_db: if span > 0.0 { span } else { 10.0 },
        }
    }

    /// Standardized SNR, clamped to the trained range `[-1/2, 1/2]` so the
    /// networks never extrapolate beyond it.
    pub fn value(&self, snr: f64) -> f64 {
        ((crate::stats::linear_to_db(snr) - self.mid_db) / self.span_db).clamp(-0.5, 0.5)
    }
}

impl Default for SnrFeature {
    fn default() -> Self {
        Self {
            mid_db: 22.0,
            span_db: 4.0,
        }
    }
}
