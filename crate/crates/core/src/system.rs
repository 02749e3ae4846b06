//! Complete transmit/receive chains: the trainable link and the
//! conventional baselines, behind one frame-level evaluation interface.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::bp::BpDecoder;
use crate::eh::{EhModel, EhOracle};
use crate::nn::{Parameterized, Tape, Tensor, Var};
use crate::phy::{
    fade, gaussian_noise, logits_to_channel_llrs, max_log_llrs, noise_variance, one_hot, pad_bits, pad_length,
    symbol_indices, ChannelKind, Constellation, CsiMode, Demapper, Mapper, Modulation, SnrFeature,
};
use crate::polar::PolarCode;
use crate::{Error, Result, LLR_CLIP};

/// Shape of the trainable link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub n: usize,
    pub k: usize,
    /// Constellation order M.
    pub order: usize,
    /// BP iterations T.
    pub iterations: usize,
    /// Power splitting factor ρ.
    pub rho: f64,
    pub csi: CsiMode,
    /// Watts per unit of normalized `(1 − ρ)‖y‖²` at the harvester input.
    pub watts_per_unit: f64,
    pub mapper_hidden: Vec<usize>,
    pub demapper_hidden: Vec<usize>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n: 64,
            k: 32,
            order: 8,
            iterations: 3,
            rho: core::f64::consts::FRAC_1_SQRT_2,
            csi: CsiMode::Perfect,
            watts_per_unit: 0.001,
            mapper_hidden: vec![128],
            demapper_hidden: vec![128],
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        PolarCode::new(self.n, self.k)?;
        if self.order < 2 || !self.order.is_power_of_two() {
            return Err(Error::Config(format!("order {} must be a power of two >= 2", self.order)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        crate::phy::check_split(self.rho)?;
        if !(self.watts_per_unit.is_finite() && self.watts_per_unit > 0.0) {
            return Err(Error::Config("watts_per_unit must be positive".into()));
        }
        Ok(())
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.trailing_zeros() as usize
    }

    /// Symbols per frame after padding the codeword to whole symbols.
    pub fn symbols_per_frame(&self) -> usize {
        (self.n + pad_length(self.n, self.bits_per_symbol())) / self.bits_per_symbol()
    }
}

/// Random quantities of one frame, drawn in a fixed order so that every
/// system evaluated on the same seed sees the same bits, fades and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDraw {
    pub info: Vec<u8>,
    /// Interleaved channel coefficients.
    pub h: Vec<f64>,
    /// Interleaved unit-variance noise; scaled by `σ` on use.
    pub noise: Vec<f64>,
}

impl FrameDraw {
    pub fn sample(info_bits: usize, symbols: usize, channel: ChannelKind, rng: &mut impl RngCore) -> Self {
        let mut info = Vec::with_capacity(info_bits);
        let mut word = 0u64;
        for i in 0..info_bits {
            if i % 64 == 0 {
                word = rng.next_u64();
            }
            info.push(((word >> (i % 64)) & 1) as u8);
        }
        let h = match channel {
            ChannelKind::Awgn => (0..symbols).flat_map(|_| [1.0, 0.0]).collect(),
            ChannelKind::Rayleigh => gaussian_noise(2 * symbols, 0.5, rng),
        };
        let noise = gaussian_noise(2 * symbols, 1.0, rng);
        Self { info, h, noise }
    }

    /// `h ⊙ x + σ·n`.
    pub fn receive(&self, x: &[f64], snr: f64) -> Vec<f64> {
        let s = libm::sqrt(noise_variance(snr));
        let mut y = fade(x, &self.h);
        for (v, n) in y.iter_mut().zip(&self.noise) {
            *v += s * n;
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameOutcome {
    pub bit_errors: u32,
    pub bits: u32,
    pub p_del_mw: f64,
}

/// Harvester path shared by all systems: splitter, unit scale and either a
/// fitted model or, without one, the analytic oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMeter {
    pub rho: f64,
    pub watts_per_unit: f64,
    pub model: Option<EhModel>,
    pub oracle: EhOracle,
}

impl EnergyMeter {
    pub fn p_in_watts(&self, received_energy: f64) -> f64 {
        self.watts_per_unit * (1.0 - self.rho) * received_energy
    }

    pub fn p_del_many(&self, received_energy: &[f64]) -> Result<Vec<f64>> {
        let p: Vec<f64> = received_energy.iter().map(|&e| self.p_in_watts(e)).collect();
        match &self.model {
            Some(m) => m.eval_many(&p),
            None => p.iter().map(|&v| self.oracle.eval(v)).collect(),
        }
    }
}

/// Anything the Monte-Carlo harness can evaluate frame by frame.
pub trait LinkSystem {
    fn label(&self) -> String;
    /// Information bits drawn (and scored) per frame.
    fn info_bits(&self) -> usize;
    fn symbols_per_frame(&self) -> usize;
    fn simulate(&self, snr: f64, draws: &[FrameDraw]) -> Result<Vec<FrameOutcome>>;
}

fn count_errors(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

fn modulate(cons: &Constellation, indices: &[usize]) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * indices.len());
    for &k in indices {
        let (re, im) = cons.point(k);
        x.push(re);
        x.push(im);
    }
    x
}

/// The trainable link: encoder → AE-mapper → channel → splitter →
/// {AE-demapper → scaled BP, harvester}.
#[derive(Debug, Clone, PartialEq)]
pub struct IdenSystem {
    pub config: SystemConfig,
    pub code: PolarCode,
    pub mapper: Mapper,
    pub demapper: Demapper,
    pub decoder: BpDecoder,
    pub eh: Option<EhModel>,
}

/// Tape nodes produced by one training forward pass.
pub struct BatchForward {
    /// P(u_j = 1), B×N.
    pub probs: Var,
    /// Delivered power per frame in mW, B×1 (absent when not requested).
    pub p_del: Option<Var>,
    /// The transmitted `u`, row-major B×N.
    pub u: Vec<u8>,
}

impl IdenSystem {
    pub fn new(config: SystemConfig, snr: SnrFeature, eh: Option<EhModel>, rng: &mut impl RngCore) -> Result<Self> {
        config.validate()?;
        let code = PolarCode::new(config.n, config.k)?;
        let mapper = Mapper::new(config.order, &config.mapper_hidden, snr, rng)?;
        let demapper = Demapper::new(config.bits_per_symbol(), &config.demapper_hidden, config.csi, snr, rng)?;
        let decoder = BpDecoder::new(&code, config.iterations)?;
        Ok(Self {
            config,
            code,
            mapper,
            demapper,
            decoder,
            eh,
        })
    }

    pub fn energy_meter(&self) -> EnergyMeter {
        EnergyMeter {
            rho: self.config.rho,
            watts_per_unit: self.config.watts_per_unit,
            model: self.eh.clone(),
            oracle: self.eh.as_ref().map(|m| m.oracle).unwrap_or_default(),
        }
    }

    /// Same trained weights, decoding with only the first `t` iterations.
    pub fn with_iterations(&self, t: usize) -> Result<Self> {
        let mut s = self.clone();
        s.decoder = self.decoder.truncated(t)?;
        s.config.iterations = t;
        Ok(s)
    }

    fn slots(&self) -> (usize, usize, usize, usize) {
        let m = self.mapper.slot_count();
        let d = self.demapper.slot_count();
        (0, m, m + d, m + d + 1)
    }

    /// Encoded, padded codeword for `info`.
    fn codeword(&self, info: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
        let u = self.code.embed(info)?;
        let c = self.code.encode(&u)?;
        Ok((u.into_inner(), pad_bits(&c, self.config.bits_per_symbol())))
    }

    /// Records the differentiable chain for a batch at linear SNR `snr`.
    ///
    /// With `trainable`, mapper/demapper/BP parameters are bound to their
    /// slots; the harvester is always a constant.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        draws: &[FrameDraw],
        snr: f64,
        with_energy: bool,
        trainable: bool,
    ) -> Result<BatchForward> {
        let b = draws.len();
        let (n, m, bps) = (self.config.n, self.config.order, self.config.bits_per_symbol());
        let l = self.config.symbols_per_frame();
        let mut u_all = Vec::with_capacity(b * n);
        let mut idx = Vec::with_capacity(b * l);
        let mut h_all = Vec::with_capacity(2 * b * l);
        let mut noise = Vec::with_capacity(2 * b * l);
        let sigma = libm::sqrt(noise_variance(snr));
        for d in draws {
            let (u, c) = self.codeword(&d.info)?;
            u_all.extend_from_slice(&u);
            idx.extend(symbol_indices(&c, bps)?);
            h_all.extend_from_slice(&d.h);
            noise.extend(d.noise.iter().map(|v| sigma * v));
        }
        let (ms, ds, a_slot, b_slot) = self.slots();
        let cons = self.mapper.forward(tape, snr, trainable.then_some(ms))?;
        let sel = tape.constant(b * l, m, one_hot(&idx, m));
        let x = tape.matmul(sel, cons)?;
        let faded = tape.complex_mul(x, h_all.clone())?;
        let nz = tape.constant(b * l, 2, noise);
        let y = tape.add(faded, nz)?;
        let data = tape.scale(y, libm::sqrt(self.config.rho));
        let logits = self.demapper.forward(tape, data, &h_all, snr, trainable.then_some(ds))?;
        let logits = tape.reshape(logits, b, l * bps)?;
        let logits = tape.slice_cols(logits, 0, n)?;
        let llr = tape.scale(logits, -1.0);
        let llr = tape.clamp(llr, -LLR_CLIP, LLR_CLIP);
        let probs = self.decoder.decode_soft(tape, llr, trainable.then_some((a_slot, b_slot)))?;

        let p_del = if with_energy {
            let eh = self
                .eh
                .as_ref()
                .ok_or_else(|| Error::Config("energy term requested without a harvester model".into()))?;
            let sq = tape.square(y);
            let per_frame = tape.reshape(sq, b, 2 * l)?;
            let energy = tape.row_sums(per_frame);
            let p_in = tape.scale(energy, self.config.watts_per_unit * (1.0 - self.config.rho));
            Some(eh.forward(tape, p_in)?)
        } else {
            None
        };
        Ok(BatchForward {
            probs,
            p_del,
            u: u_all,
        })
    }
}

impl Parameterized for IdenSystem {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.extend(self.mapper.params().into_iter().map(|(n, t)| (format!("mapper.{n}"), t)));
        out.extend(self.demapper.params().into_iter().map(|(n, t)| (format!("demapper.{n}"), t)));
        out.push(("bp.alpha".into(), self.decoder.alpha()));
        out.push(("bp.beta".into(), self.decoder.beta()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.extend(self.mapper.params_mut().into_iter().map(|(n, t)| (format!("mapper.{n}"), t)));
        out.extend(self.demapper.params_mut().into_iter().map(|(n, t)| (format!("demapper.{n}"), t)));
        let (a, b) = self.decoder.scaling_mut();
        out.push(("bp.alpha".into(), a));
        out.push(("bp.beta".into(), b));
        out
    }
}

impl LinkSystem for IdenSystem {
    fn label(&self) -> String {
        "learned".into()
    }

    fn info_bits(&self) -> usize {
        self.config.k
    }

    fn symbols_per_frame(&self) -> usize {
        self.config.symbols_per_frame()
    }

    fn simulate(&self, snr: f64, draws: &[FrameDraw]) -> Result<Vec<FrameOutcome>> {
        let cons = self.mapper.constellation(snr)?;
        let (n, bps) = (self.config.n, self.config.bits_per_symbol());
        let l = self.config.symbols_per_frame();
        let sqrt_rho = libm::sqrt(self.config.rho);
        let mut data = Vec::with_capacity(2 * l * draws.len());
        let mut h_all = Vec::with_capacity(2 * l * draws.len());
        let mut energy = Vec::with_capacity(draws.len());
        for d in draws {
            let (_, c) = self.codeword(&d.info)?;
            let y = d.receive(&modulate(&cons, &symbol_indices(&c, bps)?), snr);
            energy.push(y.iter().map(|v| v * v).sum::<f64>());
            data.extend(y.iter().map(|v| sqrt_rho * v));
            h_all.extend_from_slice(&d.h);
        }
        let logits = self.demapper.logits(&data, &h_all, snr)?;
        let p_del = self.energy_meter().p_del_many(&energy)?;
        let mut out = Vec::with_capacity(draws.len());
        for (f, d) in draws.iter().enumerate() {
            let llr = logits_to_channel_llrs(&logits[f * l * bps..f * l * bps + n]);
            let u_hat = self.decoder.decode_hard(&llr)?;
            let info_hat = self.code.extract_info(&u_hat)?;
            out.push(FrameOutcome {
                bit_errors: count_errors(&info_hat, &d.info),
                bits: self.config.k as u32,
                p_del_mw: p_del[f],
            });
        }
        Ok(out)
    }
}

/// Gray-mapped modulation with exact max-log LLRs, optionally followed by
/// the polar code and classic (scaled) min-sum BP.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSystem {
    pub modulation: Modulation,
    pub constellation: Constellation,
    /// `None` for uncoded transmission of `uncoded_bits` bits per frame.
    pub coding: Option<(PolarCode, BpDecoder)>,
    pub uncoded_bits: usize,
    pub energy: EnergyMeter,
}

impl BaselineSystem {
    /// Coded baseline with uniform BP scaling `scaling` (1.0 = plain min-sum).
    pub fn coded(
        modulation: Modulation,
        n: usize,
        k: usize,
        iterations: usize,
        scaling: f64,
        energy: EnergyMeter,
    ) -> Result<Self> {
        let code = PolarCode::new(n, k)?;
        let decoder = BpDecoder::with_scaling(&code, iterations, scaling, scaling)?;
        Ok(Self {
            modulation,
            constellation: modulation.constellation()?,
            coding: Some((code, decoder)),
            uncoded_bits: 0,
            energy,
        })
    }

    pub fn uncoded(modulation: Modulation, bits: usize, energy: EnergyMeter) -> Result<Self> {
        let constellation = modulation.constellation()?;
        if bits == 0 || bits % constellation.bits_per_symbol() != 0 {
            return Err(Error::Config(format!(
                "{bits} uncoded bits do not fill whole {modulation} symbols"
            )));
        }
        Ok(Self {
            modulation,
            constellation,
            coding: None,
            uncoded_bits: bits,
            energy,
        })
    }

    fn codeword_bits(&self) -> usize {
        self.coding
            .as_ref()
            .map_or(self.uncoded_bits, |(c, _)| c.block_length())
    }
}

impl LinkSystem for BaselineSystem {
    fn label(&self) -> String {
        match &self.coding {
            Some(_) => self.modulation.to_string(),
            None => format!("{}-uncoded", self.modulation),
        }
    }

    fn info_bits(&self) -> usize {
        self.coding.as_ref().map_or(self.uncoded_bits, |(c, _)| c.info_length())
    }

    fn symbols_per_frame(&self) -> usize {
        let bps = self.constellation.bits_per_symbol();
        let n = self.codeword_bits();
        (n + pad_length(n, bps)) / bps
    }

    fn simulate(&self, snr: f64, draws: &[FrameDraw]) -> Result<Vec<FrameOutcome>> {
        let bps = self.constellation.bits_per_symbol();
        let n = self.codeword_bits();
        let rho = self.energy.rho;
        let sqrt_rho = libm::sqrt(rho);
        let mut energies = Vec::with_capacity(draws.len());
        let mut decided = Vec::with_capacity(draws.len());
        for d in draws {
            let c = match &self.coding {
                Some((code, _)) => code.encode(&code.embed(&d.info)?)?.into_inner(),
                None => d.info.clone(),
            };
            let c = pad_bits(&c, bps);
            let y = d.receive(&modulate(&self.constellation, &symbol_indices(&c, bps)?), snr);
            energies.push(y.iter().map(|v| v * v).sum::<f64>());
            let data: Vec<f64> = y.iter().map(|v| sqrt_rho * v).collect();
            let h_eff: Vec<f64> = d.h.iter().map(|v| sqrt_rho * v).collect();
            let sigma2 = if rho > 0.0 { rho * noise_variance(snr) } else { noise_variance(snr) };
            let mut llr = max_log_llrs(&data, &h_eff, sigma2, &self.constellation)?;
            llr.truncate(n);
            let info_hat = match &self.coding {
                Some((code, dec)) => {
                    let clipped: Vec<f64> = llr.iter().map(|v| v.clamp(-LLR_CLIP, LLR_CLIP)).collect();
                    code.extract_info(&dec.decode_hard(&clipped)?)?.into_inner()
                }
                None => llr.iter().map(|&v| u8::from(v < 0.0)).collect(),
            };
            decided.push(count_errors(&info_hat, &d.info));
        }
        let p_del = self.energy.p_del_many(&energies)?;
        Ok(decided
            .into_iter()
            .zip(p_del)
            .map(|(e, p)| FrameOutcome {
                bit_errors: e,
                bits: self.info_bits() as u32,
                p_del_mw: p,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    fn small_config() -> SystemConfig {
        SystemConfig {
            n: 16,
            k: 8,
            order: 4,
            iterations: 2,
            mapper_hidden: vec![8],
            demapper_hidden: vec![8],
            ..Default::default()
        }
    }

    #[test]
    fn default_shape() {
        let c = SystemConfig::default();
        assert_eq!(c.symbols_per_frame(), 22);
        assert!((c.rho - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn param_names_are_unique_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = IdenSystem::new(small_config(), SnrFeature::default(), None, &mut rng).unwrap();
        let names: Vec<String> = sys.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.first().unwrap(), "mapper.layer0.weights");
        assert_eq!(names[names.len() - 2], "bp.alpha");
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn tape_forward_matches_frame_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = IdenSystem::new(small_config(), SnrFeature::default(), None, &mut rng).unwrap();
        let draws: Vec<FrameDraw> = (0..4)
            .map(|_| FrameDraw::sample(8, 8, ChannelKind::Rayleigh, &mut rng))
            .collect();
        let snr = 100.0;
        let mut tape = Tape::new();
        let fwd = sys.forward_batch(&mut tape, &draws, snr, false, false).unwrap();
        let probs = tape.value(fwd.probs).to_vec();
        let outcomes = sys.simulate(snr, &draws).unwrap();
        for (f, d) in draws.iter().enumerate() {
            let hard: Vec<u8> = probs[f * 16..(f + 1) * 16].iter().map(|&p| u8::from(p > 0.5)).collect();
            let info_hat = sys.code.extract_info(&hard).unwrap();
            assert_eq!(count_errors(&info_hat, &d.info), outcomes[f].bit_errors);
        }
    }

    #[test]
    fn draws_are_common_across_systems() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            FrameDraw::sample(32, 22, ChannelKind::Rayleigh, &mut a),
            FrameDraw::sample(32, 22, ChannelKind::Rayleigh, &mut b)
        );
    }
}
