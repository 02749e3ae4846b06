//! Turning `--systems` names and checkpoints into evaluable links.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iden_core::eh::EhModel;
use iden_core::harness::SystemTag;
use iden_core::phy::{Modulation, SnrFeature};
use iden_core::rng::{stream_rng, streams};
use iden_core::system::{BaselineSystem, EnergyMeter, IdenSystem, LinkSystem, SystemConfig};
use iden_core::train::TrainConfig;

use crate::io::read_checkpoint;

pub type Entry = (SystemTag, Box<dyn LinkSystem + Sync>);

/// A trained link loaded from disk.
pub struct Learned {
    pub system: IdenSystem,
    pub lambda: Option<f64>,
    pub source: PathBuf,
}

impl Learned {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        let system = ck
            .to_system()
            .with_context(|| format!("{} does not hold a usable link", path.display()))?;
        Ok(Self {
            system,
            lambda: ck.lambda(),
            source: path.to_path_buf(),
        })
    }
}

/// Untrained link for `train`, with the SNR standardization taken from the
/// training grid.
pub fn init_system(cfg: &SystemConfig, train: &TrainConfig, eh: Option<EhModel>) -> Result<IdenSystem> {
    if train.lambda > 0.0 {
        match &eh {
            None => bail!("λ = {} needs a frozen harvester checkpoint (run fit-eh, pass --eh)", train.lambda),
            Some(m) if !m.frozen => bail!("the harvester checkpoint is not frozen"),
            Some(_) => {}
        }
    }
    let mut rng = stream_rng(train.seed, streams::INIT, 0);
    Ok(IdenSystem::new(cfg.clone(), SnrFeature::from_range(&train.snrs_db), eh, &mut rng)?)
}

/// Harvester path for baselines: same splitter and scale as `cfg`, the
/// fitted model when one is available, the analytic oracle otherwise.
pub fn baseline_meter(cfg: &SystemConfig, eh: Option<&EhModel>) -> EnergyMeter {
    EnergyMeter {
        rho: cfg.rho,
        watts_per_unit: cfg.watts_per_unit,
        model: eh.cloned(),
        oracle: eh.map(|m| m.oracle).unwrap_or_default(),
    }
}

/// Conventional link named `name` (`bpsk`, `pskM`, `qamM`, optionally with
/// an `-uncoded` suffix) at `iters` BP iterations.
pub fn baseline(name: &str, cfg: &SystemConfig, iters: usize, bp_scaling: f64, meter: EnergyMeter) -> Result<Entry> {
    let (scheme, uncoded) = match name.strip_suffix("-uncoded") {
        Some(s) => (s, true),
        None => (name, false),
    };
    let m: Modulation = scheme
        .parse()
        .with_context(|| format!("unsupported system `{name}`"))?;
    if uncoded {
        // as many channel uses per frame as the coded link
        let bps = m.order().trailing_zeros() as usize;
        let sys = BaselineSystem::uncoded(m, bps * cfg.symbols_per_frame(), meter)?;
        let tag = SystemTag {
            name: sys.label(),
            lambda: None,
            iters: None,
        };
        return Ok((tag, Box::new(sys)));
    }
    let sys = BaselineSystem::coded(m, cfg.n, cfg.k, iters, bp_scaling, meter)?;
    let tag = SystemTag {
        name: sys.label(),
        lambda: None,
        iters: Some(iters),
    };
    Ok((tag, Box::new(sys)))
}

/// The sweep line-up in `names` order. `learned` expands to every loaded
/// checkpoint; an empty `iters` keeps each system's own iteration count.
pub fn lineup(
    names: &[String],
    learned: &[Learned],
    iters: &[usize],
    base: &SystemConfig,
    bp_scaling: f64,
    eh: Option<&EhModel>,
) -> Result<Vec<Entry>> {
    if names.is_empty() {
        bail!("no systems selected");
    }
    let reference = learned.first().map_or(base, |l| &l.system.config);
    let eh = eh.or_else(|| learned.iter().find_map(|l| l.system.eh.as_ref()));
    let ambiguous = |l: &Learned| learned.iter().filter(|o| o.lambda == l.lambda).count() > 1;
    let mut out = Vec::new();
    for name in names {
        if name == "learned" {
            if learned.is_empty() {
                bail!("`learned` selected but no --checkpoint given");
            }
            for l in learned {
                let label = if ambiguous(l) {
                    let stem = l.source.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                    format!("learned-{stem}")
                } else {
                    "learned".to_string()
                };
                let ts: Vec<usize> = if iters.is_empty() { vec![l.system.config.iterations] } else { iters.to_vec() };
                for t in ts {
                    let sys = l.system.with_iterations(t).with_context(|| {
                        format!("{} was trained with T = {}", l.source.display(), l.system.config.iterations)
                    })?;
                    let tag = SystemTag {
                        name: label.clone(),
                        lambda: l.lambda,
                        iters: Some(t),
                    };
                    out.push((tag, Box::new(sys) as Box<dyn LinkSystem + Sync>));
                }
            }
        } else {
            let ts: Vec<usize> = if iters.is_empty() { vec![reference.iterations] } else { iters.to_vec() };
            for t in ts {
                out.push(baseline(name, reference, t, bp_scaling, baseline_meter(reference, eh))?);
                if name.ends_with("-uncoded") {
                    break;
                }
            }
        }
    }
    Ok(out)
}
