use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use iden_core::phy::ChannelKind;

use crate::commands;
use crate::config::{parse_channel, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "iden", version, about = "Polar-coded data-and-energy link training and simulation")]
pub struct Cli {
    /// TOML or JSON configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory (default: a fresh directory under $IDEN_OUT_DIR or ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed of the selected command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit and freeze the harvester surrogate.
    FitEh,
    /// Train the link end to end.
    Train(TrainArgs),
    /// BER and harvested-power sweep to CSV.
    Sweep(SweepArgs),
    /// Write constellation JSON files.
    ExportConstellation(ExportArgs),
    /// Compare training gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Run the built-in quick checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Frozen harvester checkpoint from `fit-eh` (required when λ > 0).
    #[arg(long)]
    pub eh: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// BP iterations T.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training SNRs in dB.
    #[arg(long, value_delimiter = ',')]
    pub snrs: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Trained link checkpoints (repeatable).
    #[arg(long = "checkpoint", value_delimiter = ',')]
    pub checkpoints: Vec<PathBuf>,
    /// Harvester checkpoint for baselines when no link checkpoint carries one.
    #[arg(long)]
    pub eh: Option<PathBuf>,
    /// e.g. learned,psk8,qam16,bpsk-uncoded
    #[arg(long, value_delimiter = ',')]
    pub systems: Option<Vec<String>>,
    /// BP iteration counts, e.g. 1,3.
    #[arg(long, value_delimiter = ',')]
    pub iters: Option<Vec<usize>>,
    /// SNR grid in dB.
    #[arg(long, value_delimiter = ',')]
    pub snrs: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_channel)]
    pub channel: Option<ChannelKind>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub min_errors: Option<u64>,
    #[arg(long)]
    pub min_frames: Option<u64>,
    #[arg(long)]
    pub max_frames: Option<u64>,
    /// Conventional decoder scaling: 1 (plain min-sum) or e.g. 0.9375.
    #[arg(long)]
    pub bp_scaling: Option<f64>,
    /// Energy sweep: every learned system must record its λ.
    #[arg(long)]
    pub energy: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Conventional constellations to export alongside, e.g. psk8.
    #[arg(long, value_delimiter = ',')]
    pub systems: Vec<String>,
    /// SNR values γ in dB, one file each.
    #[arg(long, value_delimiter = ',', required = true)]
    pub snrs: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub eh: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Configuration after applying defaults, the file and the flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::FitEh => set(&mut cfg.eh.seed, cli.seed),
        Command::Train(a) => {
            set(&mut cfg.train.seed, cli.seed);
            set(&mut cfg.train.lambda, a.lambda);
            set(&mut cfg.system.iterations, a.iters);
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.train.steps_per_epoch, a.steps_per_epoch);
            set(&mut cfg.train.batch_size, a.batch_size);
            set(&mut cfg.train.learning_rate, a.lr);
            set(&mut cfg.train.snrs_db, a.snrs.clone());
        }
        Command::Sweep(a) => {
            let s = &mut cfg.sweep;
            set(&mut s.seed, cli.seed);
            set(&mut s.systems, a.systems.clone());
            set(&mut s.iters, a.iters.clone());
            set(&mut s.snrs_db, a.snrs.clone());
            set(&mut s.channel, a.channel);
            set(&mut s.stop.min_errors, a.min_errors);
            set(&mut s.stop.min_frames, a.min_frames);
            set(&mut s.stop.max_frames, a.max_frames);
            set(&mut s.bp_scaling, a.bp_scaling);
            if a.workers.is_some() {
                s.workers = a.workers;
            }
        }
        Command::GradCheck(a) => {
            set(&mut cfg.grad_check.seed, cli.seed);
            set(&mut cfg.grad_check.samples, a.samples);
            set(&mut cfg.grad_check.lambda, a.lambda);
        }
        Command::ExportConstellation(_) | Command::Selftest => {}
    }
    Ok(cfg)
}

/// Executes the parsed command; `Ok(false)` means a check failed.
pub fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve(&cli)?;
    let out = cli.out.as_deref();
    let dir = match &cli.command {
        Command::FitEh => commands::fit_eh(&cfg, out)?,
        Command::Train(a) => commands::train(&cfg, a.eh.as_deref(), out)?,
        Command::Sweep(a) => commands::sweep(&cfg, &a.checkpoints, a.eh.as_deref(), a.energy, out)?,
        Command::ExportConstellation(a) => commands::export(a.checkpoint.as_deref(), &a.systems, &a.snrs, out)?,
        Command::GradCheck(a) => commands::grad_check(&cfg, a.eh.as_deref(), out)?,
        Command::Selftest => {
            let checks = crate::selftest::run();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    };
    println!("run directory {}", dir.display());
    Ok(true)
}
