//! Monte-Carlo BER / harvested-power sweeps.
//!
//! Frame `f` of SNR point `p` always uses the RNG stream
//! `stream_rng(seed, (SWEEP << 32) | p, f)`, so every system sees the same
//! bits, fades and noise at a given point and results do not depend on how
//! frames are spread over workers. Frames are simulated in fixed-size chunks
//! and the stop rule is applied to chunks in index order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::phy::{ChannelKind, Constellation, ConstellationRecord};
use crate::rng::{stream_rng, streams};
use crate::stats::{binomial_stderr, db_to_linear};
use crate::system::{FrameDraw, LinkSystem};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "snr_db,system,lambda,iters,ber,ber_stderr,mean_pdel_mw,frames,bit_errors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopRule {
    /// Stop once this many bit errors are collected (and `min_frames` run).
    pub min_errors: u64,
    pub min_frames: u64,
    /// Hard cap on frames per point.
    pub max_frames: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_errors: 100,
            min_frames: 1000,
            max_frames: 1_000_000,
        }
    }
}

impl StopRule {
    fn done(&self, frames: u64, errors: u64) -> bool {
        frames >= self.max_frames || (errors >= self.min_errors && frames >= self.min_frames)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub snrs_db: Vec<f64>,
    pub channel: ChannelKind,
    pub stop: StopRule,
    /// Frames per chunk; part of the result definition, unlike the worker
    /// count.
    pub chunk_frames: u64,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            snrs_db: (8..=15).map(|i| f64::from(2 * i)).collect(),
            channel: ChannelKind::Rayleigh,
            stop: StopRule::default(),
            chunk_frames: 500,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.snrs_db.is_empty() {
            return Err(Error::Config("sweep SNR grid is empty".into()));
        }
        if let Some(s) = self.snrs_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::Config(format!("SNR {s} dB is not finite")));
        }
        if self.stop.min_errors == 0 || self.stop.max_frames == 0 || self.chunk_frames == 0 {
            return Err(Error::Config("stop rule and chunk size must be positive".into()));
        }
        Ok(())
    }
}

/// Row labels of one evaluated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemTag {
    pub name: String,
    /// `None` for systems without an energy objective.
    pub lambda: Option<f64>,
    /// BP iterations; `None` for uncoded links.
    pub iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tally {
    pub frames: u64,
    pub bit_errors: u64,
    pub bits: u64,
    pub p_del_sum_mw: f64,
}

impl Tally {
    fn absorb(&mut self, other: &Tally) {
        self.frames += other.frames;
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
        self.p_del_sum_mw += other.p_del_sum_mw;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub system: String,
    pub lambda: Option<f64>,
    pub iters: Option<usize>,
    pub ber: f64,
    pub ber_stderr: f64,
    pub mean_pdel_mw: f64,
    pub frames: u64,
    pub bit_errors: u64,
    /// Information bits scored (not part of the CSV).
    pub bits: u64,
}

impl SweepRow {
    fn new(snr_db: f64, tag: &SystemTag, t: &Tally) -> Self {
        let ber = if t.bits == 0 { 0.0 } else { t.bit_errors as f64 / t.bits as f64 };
        Self {
            snr_db,
            system: tag.name.clone(),
            lambda: tag.lambda,
            iters: tag.iters,
            ber,
            ber_stderr: binomial_stderr(ber, t.bits),
            mean_pdel_mw: if t.frames == 0 { 0.0 } else { t.p_del_sum_mw / t.frames as f64 },
            frames: t.frames,
            bit_errors: t.bit_errors,
            bits: t.bits,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ber.is_finite() && self.ber_stderr.is_finite() && self.mean_pdel_mw.is_finite()
    }

    /// BER as an error proportion over information bits.
    pub fn proportion(&self) -> crate::stats::Proportion {
        crate::stats::Proportion::new(self.bit_errors, self.bits)
    }
}

/// One unit of work: frames `start .. start + len` of SNR point `point`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkJob {
    pub point: usize,
    pub start: u64,
    pub len: u64,
}

/// Strategy for evaluating a wave of chunks; results must come back in job
/// order.
pub trait ChunkRunner {
    /// Chunks submitted per wave.
    fn wave(&self) -> usize;
    fn run(&self, jobs: &[ChunkJob], work: &(dyn Fn(&ChunkJob) -> Result<Tally> + Sync)) -> Vec<Result<Tally>>;
}

/// Runs chunks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ChunkRunner for Sequential {
    fn wave(&self) -> usize {
        1
    }

    fn run(&self, jobs: &[ChunkJob], work: &(dyn Fn(&ChunkJob) -> Result<Tally> + Sync)) -> Vec<Result<Tally>> {
        jobs.iter().map(work).collect()
    }
}

/// The draws of frames `start .. start + len` at point `point`.
pub fn frame_draws(system: &dyn LinkSystem, spec: &SweepSpec, job: &ChunkJob) -> Vec<FrameDraw> {
    let stream = (streams::SWEEP << 32) | job.point as u64;
    (job.start..job.start + job.len)
        .map(|f| {
            let mut rng = stream_rng(spec.seed, stream, f);
            FrameDraw::sample(system.info_bits(), system.symbols_per_frame(), spec.channel, &mut rng)
        })
        .collect()
}

fn simulate_chunk(system: &dyn LinkSystem, spec: &SweepSpec, job: &ChunkJob) -> Result<Tally> {
    let snr = db_to_linear(spec.snrs_db[job.point]);
    let draws = frame_draws(system, spec, job);
    let outcomes = system.simulate(snr, &draws)?;
    let mut t = Tally::default();
    for o in &outcomes {
        t.frames += 1;
        t.bit_errors += u64::from(o.bit_errors);
        t.bits += u64::from(o.bits);
        t.p_del_sum_mw += o.p_del_mw;
    }
    Ok(t)
}

/// Tally of one SNR point under the ordered stop rule.
pub fn run_point(
    system: &(dyn LinkSystem + Sync),
    spec: &SweepSpec,
    point: usize,
    runner: &dyn ChunkRunner,
) -> Result<Tally> {
    let mut total = Tally::default();
    let mut next = 0u64;
    let work = |job: &ChunkJob| simulate_chunk(system, spec, job);
    while !spec.stop.done(total.frames, total.bit_errors) {
        let mut jobs = Vec::with_capacity(runner.wave().max(1));
        let mut start = next;
        while jobs.len() < runner.wave().max(1) && start < spec.stop.max_frames {
            let len = spec.chunk_frames.min(spec.stop.max_frames - start);
            jobs.push(ChunkJob { point, start, len });
            start += len;
        }
        for r in runner.run(&jobs, &work) {
            let t = r?;
            total.absorb(&t);
            next += t.frames;
            if spec.stop.done(total.frames, total.bit_errors) {
                break;
            }
        }
    }
    Ok(total)
}

/// BER and mean delivered power of `system` at every SNR of `spec`.
pub fn ber_sweep(
    system: &(dyn LinkSystem + Sync),
    tag: &SystemTag,
    spec: &SweepSpec,
    runner: &dyn ChunkRunner,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    (0..spec.snrs_db.len())
        .map(|p| Ok(SweepRow::new(spec.snrs_db[p], tag, &run_point(system, spec, p, runner)?)))
        .collect()
}

/// Sweeps several systems; rows are ordered by SNR, then by system.
pub fn compare(
    systems: &[(SystemTag, &(dyn LinkSystem + Sync))],
    spec: &SweepSpec,
    runner: &dyn ChunkRunner,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if systems.is_empty() {
        return Err(Error::Config("no systems to sweep".into()));
    }
    let mut rows = Vec::with_capacity(spec.snrs_db.len() * systems.len());
    for p in 0..spec.snrs_db.len() {
        for (tag, sys) in systems {
            rows.push(SweepRow::new(spec.snrs_db[p], tag, &run_point(*sys, spec, p, runner)?));
        }
    }
    Ok(rows)
}

/// Mean delivered power per SNR for one trained system per λ. Every entry
/// must carry its λ.
pub fn energy_sweep(
    systems: &[(SystemTag, &(dyn LinkSystem + Sync))],
    spec: &SweepSpec,
    runner: &dyn ChunkRunner,
) -> Result<Vec<SweepRow>> {
    if let Some((tag, _)) = systems.iter().find(|(t, _)| t.lambda.is_none()) {
        return Err(Error::Config(format!("system `{}` has no λ for the energy sweep", tag.name)));
    }
    compare(systems, spec, runner)
}

/// CSV text with [`CSV_HEADER`]; floats use the shortest representation
/// that round-trips.
pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let opt_f = r.lambda.map(|v| format!("{v}")).unwrap_or_default();
        let opt_i = r.iters.map(|v| format!("{v}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.snr_db, r.system, opt_f, opt_i, r.ber, r.ber_stderr, r.mean_pdel_mw, r.frames, r.bit_errors
        );
    }
    s
}

/// Exported constellation with its measured mean power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationExport {
    pub system: String,
    pub snr_db: f64,
    pub mean_power: f64,
    pub points: Vec<ConstellationRecord>,
}

/// Tolerance on the unit mean-power invariant.
pub const POWER_TOLERANCE: f64 = 1e-9;

pub fn export_constellation(cons: &Constellation, system: &str, snr_db: f64) -> Result<ConstellationExport> {
    let mean_power = cons.mean_power();
    if (mean_power - 1.0).abs() > POWER_TOLERANCE {
        return Err(Error::Input(format!(
            "constellation `{system}` at {snr_db} dB has mean power {mean_power}"
        )));
    }
    Ok(ConstellationExport {
        system: system.into(),
        snr_db,
        mean_power,
        points: cons.records(),
    })
}
