//! Run configuration: built-in defaults, then an optional TOML or JSON
//! file, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use iden_core::eh::EhFitConfig;
use iden_core::harness::{StopRule, SweepSpec};
use iden_core::phy::ChannelKind;
use iden_core::system::SystemConfig;
use iden_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default root for run directories.
pub const OUT_DIR_ENV: &str = "IDEN_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub train: TrainConfig,
    pub eh: EhFitConfig,
    pub sweep: SweepConfig,
    pub grad_check: GradCheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub snrs_db: Vec<f64>,
    pub channel: ChannelKind,
    pub stop: StopRule,
    pub chunk_frames: u64,
    pub seed: u64,
    /// `learned` and/or baseline names such as `psk8`, `qam16`, `bpsk`.
    pub systems: Vec<String>,
    /// BP iteration counts to evaluate; empty means each system's own.
    pub iters: Vec<usize>,
    /// Uniform α = β of the conventional decoder (1 = plain min-sum).
    pub bp_scaling: f64,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let spec = SweepSpec::default();
        Self {
            snrs_db: spec.snrs_db,
            channel: spec.channel,
            stop: spec.stop,
            chunk_frames: spec.chunk_frames,
            seed: spec.seed,
            systems: vec!["learned".into(), "psk8".into()],
            iters: Vec::new(),
            bp_scaling: 1.0,
            workers: None,
        }
    }
}

impl SweepConfig {
    pub fn spec(&self) -> SweepSpec {
        SweepSpec {
            snrs_db: self.snrs_db.clone(),
            channel: self.channel,
            stop: self.stop,
            chunk_frames: self.chunk_frames,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// Checked coordinates.
    pub samples: usize,
    pub seed: u64,
    /// Frames in the probe batch.
    pub frames: usize,
    pub snr_db: f64,
    pub lambda: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0,
            frames: 4,
            snr_db: 12.0,
            lambda: 0.5,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    /// Parses a config file, choosing the format by extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let cfg = match ext.to_ascii_lowercase().as_str() {
            "toml" => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            "json" => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => bail!("config {} must end in .toml or .json", path.display()),
        };
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::from_file)
    }
}

pub fn parse_channel(s: &str) -> Result<ChannelKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "awgn" => Ok(ChannelKind::Awgn),
        "rayleigh" => Ok(ChannelKind::Rayleigh),
        _ => Err(format!("unknown channel '{s}' (use awgn or rayleigh)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let r: Result<RunConfig, _> = toml::from_str("[train]\nlamda = 0.1\n");
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("lamda"), "{msg}");
        assert!(serde_json::from_str::<RunConfig>(r#"{"sweep": {"worker": 2}}"#).is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("[train]\nlambda = 0.25\n[sweep]\nsnrs_db = [10.0]\n").unwrap();
        assert_eq!(cfg.train.lambda, 0.25);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.sweep.snrs_db, vec![10.0]);
        assert_eq!(cfg.system, SystemConfig::default());
    }

    #[test]
    fn default_round_trips_through_both_formats() {
        let cfg = RunConfig::default();
        let t = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&t).unwrap(), cfg);
        let j = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&j).unwrap(), cfg);
    }
}
