//! Versioned parameter snapshots shared by trained links and fitted
//! harvesters. This module only defines the data model and the conversions;
//! encoding to bytes is left to the caller.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bp::BpDecoder;
use crate::eh::{EhModel, EhOracle};
use crate::nn::{Activation, Layer, NetworkParams, Parameterized, Tensor};
use crate::phy::{Demapper, Mapper, SnrFeature};
use crate::polar::PolarCode;
use crate::system::{IdenSystem, SystemConfig};
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemMeta {
    pub config: SystemConfig,
    pub snr_feature: SnrFeature,
    /// Training run that produced the weights, when known.
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

/// Everything but the weights of an [`EhModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EhMeta {
    pub oracle: EhOracle,
    pub input_scale: f64,
    pub input_offset: f64,
    pub output_scale: f64,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub rng_seed: u64,
    pub system: Option<SystemMeta>,
    pub eh: Option<EhMeta>,
    /// Per-network activation tags, keyed by `mapper`, `demapper`, `eh`.
    pub activations: BTreeMap<String, Vec<Activation>>,
    pub tensors: Vec<NamedTensor>,
}

/// Rejects any version other than [`FORMAT_VERSION`].
pub fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {found} is not supported (expected version {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn push_tensors<P: Parameterized + ?Sized>(out: &mut Vec<NamedTensor>, prefix: &str, model: &P) {
    for (name, t) in model.params() {
        out.push(NamedTensor {
            name: format!("{prefix}{name}"),
            shape: t.shape().to_vec(),
            values: t.values().to_vec(),
        });
    }
}

fn activations(net: &NetworkParams) -> Vec<Activation> {
    net.layers().iter().map(|l| l.activation).collect()
}

impl Checkpoint {
    /// Header-only snapshot.
    pub fn empty(created: u64, rng_seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            created,
            rng_seed,
            system: None,
            eh: None,
            activations: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn from_eh(model: &EhModel, created: u64, rng_seed: u64) -> Self {
        let mut ck = Self::empty(created, rng_seed);
        ck.add_eh(model);
        ck
    }

    /// Snapshot of a link, including its harvester when it has one.
    pub fn from_system(system: &IdenSystem, created: u64, rng_seed: u64) -> Self {
        let mut ck = Self::empty(created, rng_seed);
        ck.system = Some(SystemMeta {
            config: system.config.clone(),
            snr_feature: system.mapper.snr,
            train: None,
        });
        ck.activations.insert("mapper".into(), activations(&system.mapper.net));
        ck.activations.insert("demapper".into(), activations(&system.demapper.net));
        push_tensors(&mut ck.tensors, "mapper.", &system.mapper);
        push_tensors(&mut ck.tensors, "demapper.", &system.demapper);
        for (name, t) in [("bp.alpha", system.decoder.alpha()), ("bp.beta", system.decoder.beta())] {
            ck.tensors.push(NamedTensor {
                name: name.into(),
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
            });
        }
        if let Some(eh) = &system.eh {
            ck.add_eh(eh);
        }
        ck
    }

    fn add_eh(&mut self, model: &EhModel) {
        self.eh = Some(EhMeta {
            oracle: model.oracle,
            input_scale: model.input_scale,
            input_offset: model.input_offset,
            output_scale: model.output_scale,
            frozen: model.frozen,
        });
        self.activations.insert("eh".into(), activations(&model.net));
        push_tensors(&mut self.tensors, "eh.", model);
    }

    fn tensor(&self, name: &str) -> Result<Tensor> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        Tensor::new(t.shape.clone(), t.values.clone())
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))
    }

    fn network(&self, prefix: &str) -> Result<NetworkParams> {
        let acts = self
            .activations
            .get(prefix)
            .ok_or_else(|| Error::Checkpoint(format!("missing activation tags for `{prefix}`")))?;
        let mut layers = Vec::with_capacity(acts.len());
        for (i, &activation) in acts.iter().enumerate() {
            layers.push(Layer {
                weights: self.tensor(&format!("{prefix}.layer{i}.weights"))?,
                bias: self.tensor(&format!("{prefix}.layer{i}.bias"))?,
                activation,
            });
        }
        NetworkParams::new(layers).map_err(|e| Error::Checkpoint(format!("`{prefix}` network: {e}")))
    }

    /// Tensor names not consumed by any module, which indicates a foreign or
    /// corrupted file.
    fn check_no_strays(&self) -> Result<()> {
        let known = |name: &str| {
            let net = |p: &str| {
                name.strip_prefix(p).is_some_and(|rest| {
                    rest.strip_prefix(".layer").is_some_and(|r| r.ends_with(".weights") || r.ends_with(".bias"))
                })
            };
            (net("mapper") || net("demapper") || name == "bp.alpha" || name == "bp.beta") && self.system.is_some()
                || net("eh") && self.eh.is_some()
        };
        if let Some(t) = self.tensors.iter().find(|t| !known(&t.name)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{}`", t.name)));
        }
        Ok(())
    }

    pub fn to_eh(&self) -> Result<EhModel> {
        check_version(self.format_version)?;
        self.check_no_strays()?;
        let meta = self
            .eh
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no harvester model stored".into()))?;
        let mut model = EhModel::new(self.network("eh")?, meta.input_scale, meta.input_offset, meta.oracle)?;
        model.output_scale = meta.output_scale;
        model.frozen = meta.frozen;
        Ok(model)
    }

    /// λ of the stored training run.
    pub fn lambda(&self) -> Option<f64> {
        self.system.as_ref()?.train.as_ref().map(|t| t.lambda)
    }

    /// Rebuilds the link; shapes must agree with the stored configuration.
    pub fn to_system(&self) -> Result<IdenSystem> {
        check_version(self.format_version)?;
        self.check_no_strays()?;
        let meta = self
            .system
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no link stored".into()))?;
        let cfg = &meta.config;
        cfg.validate()?;
        let code = PolarCode::new(cfg.n, cfg.k)?;
        let mapper = Mapper::from_parts(self.network("mapper")?, cfg.order, meta.snr_feature)?;
        let demapper =
            Demapper::from_parts(self.network("demapper")?, cfg.bits_per_symbol(), cfg.csi, meta.snr_feature)?;
        let decoder = BpDecoder::from_parts(&code, self.tensor("bp.alpha")?, self.tensor("bp.beta")?)
            .map_err(|e| Error::Checkpoint(format!("stored BP parameters: {e}")))?;
        if decoder.iterations() != cfg.iterations {
            return Err(Error::Checkpoint(format!(
                "BP parameters cover {} iterations but the configuration says {}",
                decoder.iterations(),
                cfg.iterations
            )));
        }
        let eh = if self.eh.is_some() { Some(self.to_eh()?) } else { None };
        Ok(IdenSystem {
            config: cfg.clone(),
            code,
            mapper,
            demapper,
            decoder,
            eh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn small_system() -> IdenSystem {
        let cfg = SystemConfig {
            n: 16,
            k: 8,
            order: 4,
            iterations: 2,
            mapper_hidden: alloc::vec![8],
            demapper_hidden: alloc::vec![8],
            ..Default::default()
        };
        let mut rng = stream_rng(4, 0, 0);
        IdenSystem::new(cfg, SnrFeature::default(), None, &mut rng).unwrap()
    }

    #[test]
    fn system_round_trip() {
        let sys = small_system();
        let ck = Checkpoint::from_system(&sys, 7, 4);
        let back = ck.to_system().unwrap();
        assert_eq!(back, sys);
        assert_eq!(Checkpoint::from_system(&back, 7, 4), ck);
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut ck = Checkpoint::from_system(&small_system(), 0, 0);
        ck.format_version = 9;
        let msg = alloc::string::ToString::to_string(&ck.to_system().unwrap_err());
        assert!(msg.contains('9') && msg.contains(&format!("{FORMAT_VERSION}")), "{msg}");
    }

    #[test]
    fn wrong_block_length_is_rejected() {
        let mut ck = Checkpoint::from_system(&small_system(), 0, 0);
        ck.system.as_mut().unwrap().config.n = 32;
        assert!(ck.to_system().is_err());
    }

    #[test]
    fn stray_and_missing_tensors() {
        let mut ck = Checkpoint::from_system(&small_system(), 0, 0);
        ck.tensors.push(NamedTensor {
            name: "extra".into(),
            shape: alloc::vec![1],
            values: alloc::vec![0.0],
        });
        assert!(ck.to_system().is_err());
        ck.tensors.pop();
        ck.tensors.retain(|t| t.name != "bp.beta");
        assert!(ck.to_system().is_err());
    }

    #[test]
    fn empty_checkpoint_holds_nothing() {
        let ck = Checkpoint::empty(1, 2);
        assert!(ck.to_system().is_err());
        assert!(ck.to_eh().is_err());
    }
}
