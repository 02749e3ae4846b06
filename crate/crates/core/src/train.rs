//! End-to-end training: joint cross-entropy / harvested-power loss and the
//! multi-SNR schedule.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::{OptimizerKind, OptimizerState, Parameterized, Tape, Var};
use crate::phy::ChannelKind;
use crate::rng::{stream_rng, streams};
use crate::stats::db_to_linear;
use crate::system::{FrameDraw, IdenSystem};
use crate::{Error, Result};

/// Order in which the training SNRs are visited. Both give every SNR
/// `epochs · steps_per_epoch` batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// All epochs of one SNR, then the next.
    Sequential,
    /// Round-robin over the SNR set, one batch at a time.
    #[default]
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight λ of the energy term.
    pub lambda: f64,
    pub batch_size: usize,
    /// Epochs E per training SNR.
    pub epochs: usize,
    /// Optimizer steps per epoch, each on a freshly drawn batch.
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Training SNRs in dB, visited in order.
    pub snrs_db: Vec<f64>,
    pub schedule: Schedule,
    pub channel: ChannelKind,
    pub seed: u64,
    /// Probability clip ε for the cross-entropy.
    pub eps_clip: f64,
    /// Floor on P_del (mW) inside λ/P_del.
    pub eps_p: f64,
    /// Lower bound kept on every BP scaling parameter.
    pub scaling_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            batch_size: 1000,
            epochs: 5,
            steps_per_epoch: 40,
            learning_rate: 0.005,
            optimizer: OptimizerKind::Adam,
            snrs_db: vec![20.0, 22.0, 24.0],
            schedule: Schedule::Interleaved,
            channel: ChannelKind::Rayleigh,
            seed: 0,
            eps_clip: 1e-7,
            eps_p: 1e-9,
            scaling_floor: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.snrs_db.is_empty() {
            return Err(Error::Config("training SNR set is empty".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 0.5 && self.eps_p > 0.0) {
            return Err(Error::Config("eps_clip must lie in (0, 0.5) and eps_p be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.snrs_db.len() * self.epochs * self.steps_per_epoch
    }

    /// Training SNR (dB) of every step in order.
    pub fn snr_sequence(&self) -> Vec<f64> {
        let per_snr = self.epochs * self.steps_per_epoch;
        match self.schedule {
            Schedule::Sequential => self
                .snrs_db
                .iter()
                .flat_map(|&s| core::iter::repeat_n(s, per_snr))
                .collect(),
            Schedule::Interleaved => (0..per_snr).flat_map(|_| self.snrs_db.iter().copied()).collect(),
        }
    }
}

/// Loss nodes; `total = ce + wet`.
pub struct LossNodes {
    pub total: Var,
    pub ce: Var,
    pub wet: Option<Var>,
}

/// `(1/B)·Σ_frames [BCE(u, b̂) + λ / max(P_del, ε_P)]`.
///
/// `u` is the row-major B×N target, `probs` the B×N predictions. The energy
/// term is only built when `λ > 0`.
pub fn loss(
    tape: &mut Tape,
    u: &[u8],
    probs: Var,
    p_del: Option<Var>,
    lambda: f64,
    eps_clip: f64,
    eps_p: f64,
) -> Result<LossNodes> {
    let (rows, cols) = tape.shape(probs);
    if u.len() != rows * cols {
        return Err(Error::Shape {
            op: "loss",
            expected: format!("{rows}x{cols} targets"),
            actual: format!("{}", u.len()),
        });
    }
    let inv_b = 1.0 / rows as f64;
    let p = tape.clamp(probs, eps_clip, 1.0 - eps_clip);
    let ln_p = tape.ln(p);
    let q = tape.scale(p, -1.0);
    let q = tape.shift(q, 1.0);
    let ln_q = tape.ln(q);
    let ones = tape.constant(rows, cols, u.iter().map(|&b| f64::from(b)).collect());
    let zeros = tape.constant(rows, cols, u.iter().map(|&b| 1.0 - f64::from(b)).collect());
    let a = tape.mul(ln_p, ones)?;
    let b = tape.mul(ln_q, zeros)?;
    let ll = tape.add(a, b)?;
    let s = tape.sum(ll);
    let ce = tape.scale(s, -inv_b);

    let wet = if lambda > 0.0 {
        let p_del = p_del.ok_or_else(|| Error::Usage("λ > 0 needs delivered-power nodes".into()))?;
        if tape.shape(p_del) != (rows, 1) {
            return Err(Error::Shape {
                op: "loss",
                expected: format!("{rows}x1 delivered power"),
                actual: format!("{:?}", tape.shape(p_del)),
            });
        }
        let floored = tape.clamp(p_del, eps_p, f64::INFINITY);
        let r = tape.recip(floored);
        let s = tape.sum(r);
        Some(tape.scale(s, lambda * inv_b))
    } else {
        None
    };
    let total = match wet {
        Some(w) => tape.add(ce, w)?,
        None => ce,
    };
    Ok(LossNodes { total, ce, wet })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub snr_db: f64,
    pub ce: f64,
    pub wet: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// SHA-256 over the trained parameters.
    pub checksum: String,
    /// Harvester checksum, identical before and after training.
    pub eh_checksum: Option<String>,
    /// Filled in by callers that have a clock.
    pub wall_clock_s: f64,
}

/// SHA-256 (hex) over parameter names, shapes and IEEE-754 bit patterns.
pub fn param_checksum<P: Parameterized + ?Sized>(model: &P) -> String {
    let mut h = Sha256::new();
    for (name, t) in model.params() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.values() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn draw_batch(system: &IdenSystem, channel: ChannelKind, size: usize, seed: u64, stream: u64, index: u64) -> Vec<FrameDraw> {
    let mut rng = stream_rng(seed, stream, index);
    let (k, l) = (system.config.k, system.config.symbols_per_frame());
    (0..size).map(|_| FrameDraw::sample(k, l, channel, &mut rng)).collect()
}

fn snapshot<P: Parameterized>(model: &P) -> Vec<Vec<f64>> {
    model.params().into_iter().map(|(_, t)| t.values().to_vec()).collect()
}

fn restore<P: Parameterized>(model: &mut P, values: Vec<Vec<f64>>) {
    for ((_, t), v) in model.params_mut().into_iter().zip(values) {
        t.values_mut().copy_from_slice(&v);
    }
}

/// Runs the full schedule, updating mapper, demapper and BP scaling jointly.
/// The harvester is read-only. On a non-finite loss the system is rolled
/// back to the last parameters with a finite loss and the step index is
/// returned in the error.
pub fn train_epochs(system: &mut IdenSystem, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let with_energy = cfg.lambda > 0.0;
    if with_energy && !system.eh.as_ref().is_some_and(|m| m.frozen) {
        return Err(Error::Config("λ > 0 requires a frozen harvester model".into()));
    }
    let eh_before = system.eh.as_ref().map(param_checksum);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);
    let mut records = Vec::with_capacity(cfg.total_steps());
    let mut last_good = None;
    for (step, snr_db) in cfg.snr_sequence().into_iter().enumerate() {
        let snr = db_to_linear(snr_db);
        let draws = draw_batch(system, cfg.channel, cfg.batch_size, cfg.seed, streams::TRAIN, step as u64);
        let mut tape = Tape::new();
        let fwd = system.forward_batch(&mut tape, &draws, snr, with_energy, true)?;
        let nodes = loss(&mut tape, &fwd.u, fwd.probs, fwd.p_del, cfg.lambda, cfg.eps_clip, cfg.eps_p)?;
        let total = tape.scalar(nodes.total);
        if !total.is_finite() {
            if let Some(good) = last_good.take() {
                restore(system, good);
            }
            return Err(Error::NonFiniteLoss(step));
        }
        last_good = Some(snapshot(system));
        let ce = tape.scalar(nodes.ce);
        let wet = nodes.wet.map_or(0.0, |w| tape.scalar(w));
        tape.backward(nodes.total)?;
        system.zero_grads();
        system.absorb_grads(&tape);
        opt.step(system)?;
        system.decoder.project_scaling(cfg.scaling_floor);
        records.push(StepRecord {
            snr_db,
            ce,
            wet,
            total,
        });
    }
    let eh_after = system.eh.as_ref().map(param_checksum);
    if eh_before != eh_after {
        return Err(Error::Usage("harvester parameters changed during training".into()));
    }
    Ok(TrainReport {
        seed: cfg.seed,
        steps: records,
        checksum: param_checksum(system),
        eh_checksum: eh_after,
        wall_clock_s: 0.0,
    })
}

/// Cross-entropy (per frame, summed over the N positions) of `system` on a
/// fixed batch identified by `seed`.
pub fn validation_ce(
    system: &IdenSystem,
    snr_db: f64,
    channel: ChannelKind,
    frames: usize,
    seed: u64,
) -> Result<f64> {
    let draws = draw_batch(system, channel, frames, seed, streams::VALIDATION, 0);
    let mut tape = Tape::new();
    let fwd = system.forward_batch(&mut tape, &draws, db_to_linear(snr_db), false, false)?;
    let nodes = loss(&mut tape, &fwd.u, fwd.probs, None, 0.0, 1e-7, 1e-9)?;
    Ok(tape.scalar(nodes.ce))
}
