use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use iden_core::checkpoint::Checkpoint;
use iden_core::eh::{fit, EhModel};
use iden_core::harness::{compare, energy_sweep, export_constellation, to_csv, SweepRow};
use iden_core::nn::{grad_check as check_gradients, GradCheckOptions, GradCheckReport};
use iden_core::phy::{Constellation, Modulation};
use iden_core::rng::{stream_rng, streams};
use iden_core::stats::db_to_linear;
use iden_core::system::{FrameDraw, LinkSystem};
use iden_core::train::{loss, param_checksum, train_epochs};
use iden_core::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::io::{read_checkpoint, run_dir, timestamp, write_checkpoint, write_json, write_text};
use crate::manifest::Run;
use crate::runner::RayonRunner;
use crate::systems::{init_system, lineup, Learned};

pub const EH_FILE: &str = "eh.json";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const SYSTEM_FILE: &str = "system.json";
pub const LAST_GOOD_FILE: &str = "system.last_good.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const GRAD_CHECK_FILE: &str = "grad_check.json";

pub fn load_eh(path: &Path) -> Result<EhModel> {
    let ck = read_checkpoint(path)?;
    ck.to_eh()
        .with_context(|| format!("{} does not hold a harvester model", path.display()))
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

/// Fits and freezes the harvester surrogate.
pub fn fit_eh(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = run_dir(out, &format!("fit-eh-s{}", cfg.eh.seed))?;
    let run = Run::start(dir, "fit-eh", &cfg.eh, seeds(&[("eh", cfg.eh.seed)]), &[EH_FILE, FIT_REPORT_FILE])?;
    let (model, report) = fit(&cfg.eh)?;
    write_checkpoint(&run.path(EH_FILE), &Checkpoint::from_eh(&model, timestamp(), cfg.eh.seed))?;
    write_json(&run.path(FIT_REPORT_FILE), &report)?;
    let pct = 100.0 * report.max_abs_error_mw / cfg.eh.oracle.p_max_mw;
    println!("fit error {pct:.3}% of p_max after {} steps", report.steps);
    if !report.converged {
        run.finish("failed")?;
        bail!(
            "harvester fit error {pct:.3}% of p_max exceeds the {:.3}% tolerance",
            100.0 * cfg.eh.tolerance
        );
    }
    run.finish("ok")
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    #[serde(flatten)]
    report: &'a iden_core::train::TrainReport,
    eh_checkpoint: Option<String>,
}

/// End-to-end training of one link.
pub fn train(cfg: &RunConfig, eh_path: Option<&Path>, out: Option<&Path>) -> Result<PathBuf> {
    let eh = eh_path.map(load_eh).transpose()?;
    // checked before any directory is created
    let mut system = init_system(&cfg.system, &cfg.train, eh)?;
    let name = format!("train-l{}-t{}-s{}", cfg.train.lambda, cfg.system.iterations, cfg.train.seed);
    let dir = run_dir(out, &name)?;
    let snapshot = serde_json::json!({ "system": cfg.system, "train": cfg.train });
    let mut run = Run::start(
        dir,
        "train",
        &snapshot,
        seeds(&[("train", cfg.train.seed)]),
        &[SYSTEM_FILE, TRAIN_REPORT_FILE],
    )?;
    let save = |system: &iden_core::system::IdenSystem, path: &Path| {
        let mut ck = Checkpoint::from_system(system, timestamp(), cfg.train.seed);
        if let Some(meta) = ck.system.as_mut() {
            meta.train = Some(cfg.train.clone());
        }
        write_checkpoint(path, &ck)
    };
    let started = Instant::now();
    let mut report = match train_epochs(&mut system, &cfg.train) {
        Ok(r) => r,
        Err(e @ Error::NonFiniteLoss(_)) => {
            save(&system, &run.path(LAST_GOOD_FILE))?;
            run.record(LAST_GOOD_FILE);
            run.finish("failed")?;
            return Err(e).context(format!("training aborted; last good parameters saved to {LAST_GOOD_FILE}"));
        }
        Err(e) => {
            run.finish("failed")?;
            return Err(e.into());
        }
    };
    report.wall_clock_s = started.elapsed().as_secs_f64();
    save(&system, &run.path(SYSTEM_FILE))?;
    let record = TrainRecord {
        report: &report,
        eh_checkpoint: eh_path.map(|p| p.display().to_string()),
    };
    write_json(&run.path(TRAIN_REPORT_FILE), &record)?;
    if let Some(last) = report.steps.last() {
        println!(
            "trained {} steps in {:.1} s; final CE {:.4}, energy term {:.4}",
            report.steps.len(),
            report.wall_clock_s,
            last.ce,
            last.wet
        );
    }
    println!("checksum {}", report.checksum);
    run.finish("ok")
}

/// Rows of a sweep over `checkpoints` and the configured baselines.
pub fn sweep_rows(
    cfg: &RunConfig,
    learned: &[Learned],
    eh: Option<&EhModel>,
    energy: bool,
    runner: &RayonRunner,
) -> Result<Vec<SweepRow>> {
    let s = &cfg.sweep;
    let entries = lineup(&s.systems, learned, &s.iters, &cfg.system, s.bp_scaling, eh)?;
    let refs: Vec<_> = entries.iter().map(|(t, sys)| (t.clone(), sys.as_ref())).collect();
    let spec = s.spec();
    Ok(if energy {
        energy_sweep(&refs, &spec, runner)?
    } else {
        compare(&refs, &spec, runner)?
    })
}

/// BER / harvested-power sweep written as CSV. Fails after writing if any
/// row is not finite.
pub fn sweep(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    eh_path: Option<&Path>,
    energy: bool,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let learned: Vec<Learned> = checkpoints.iter().map(|p| Learned::load(p)).collect::<Result<_>>()?;
    let eh = eh_path.map(load_eh).transpose()?;
    cfg.sweep.spec().validate()?;
    let runner = RayonRunner::new(cfg.sweep.workers)?;
    let dir = run_dir(out, &format!("sweep-s{}", cfg.sweep.seed))?;
    let snapshot = serde_json::json!({
        "system": cfg.system,
        "sweep": cfg.sweep,
        "checkpoints": checkpoints,
        "eh_checkpoint": eh_path,
        "energy": energy,
    });
    let run = Run::start(dir, "sweep", &snapshot, seeds(&[("sweep", cfg.sweep.seed)]), &[SWEEP_FILE])?;
    let rows = sweep_rows(cfg, &learned, eh.as_ref(), energy, &runner)?;
    write_text(&run.path(SWEEP_FILE), &to_csv(&rows))?;
    for r in &rows {
        println!(
            "{:>6} dB  {:<12} λ={:<6} T={:<3} BER {:.3e} ± {:.1e}  P_del {:.4} mW  ({} frames)",
            r.snr_db,
            r.system,
            r.lambda.map_or("-".into(), |l| l.to_string()),
            r.iters.map_or("-".into(), |t| t.to_string()),
            r.ber,
            r.ber_stderr,
            r.mean_pdel_mw,
            r.frames
        );
    }
    if let Some(bad) = rows.iter().find(|r| !r.is_finite()) {
        run.finish("failed")?;
        bail!("non-finite result for {} at {} dB", bad.system, bad.snr_db);
    }
    run.finish("ok")
}

fn export_file(system: &str, snr_db: f64) -> String {
    format!("constellation-{system}-{snr_db}dB.json")
}

/// One JSON file per (system, γ). `γ` is given in dB.
pub fn export(
    checkpoint: Option<&Path>,
    baselines: &[String],
    snrs_db: &[f64],
    out: Option<&Path>,
) -> Result<PathBuf> {
    ensure!(!snrs_db.is_empty(), "no SNR values given");
    ensure!(checkpoint.is_some() || !baselines.is_empty(), "nothing to export: pass --checkpoint or --systems");
    let learned = checkpoint.map(Learned::load).transpose()?;
    let mut sources: Vec<(String, Option<Constellation>)> = Vec::new();
    if learned.is_some() {
        sources.push(("learned".into(), None));
    }
    for b in baselines {
        let m: Modulation = b.parse().with_context(|| format!("unsupported system `{b}`"))?;
        sources.push((m.to_string(), Some(m.constellation()?)));
    }
    let files: Vec<String> = sources
        .iter()
        .flat_map(|(name, _)| snrs_db.iter().map(move |&s| export_file(name, s)))
        .collect();
    let planned: Vec<&str> = files.iter().map(String::as_str).collect();
    let dir = run_dir(out, "export")?;
    let snapshot = serde_json::json!({ "checkpoint": checkpoint, "systems": baselines, "snrs_db": snrs_db });
    let run = Run::start(dir, "export-constellation", &snapshot, BTreeMap::new(), &planned)?;
    for (name, fixed) in &sources {
        for &snr_db in snrs_db {
            let cons = match (fixed, &learned) {
                (Some(c), _) => c.clone(),
                (None, Some(l)) => l.system.mapper.constellation(db_to_linear(snr_db))?,
                (None, None) => unreachable!(),
            };
            let e = export_constellation(&cons, name, snr_db)?;
            write_json(&run.path(&export_file(name, snr_db)), &e)?;
        }
    }
    println!("wrote {} constellation files", files.len());
    run.finish("ok")
}

#[derive(Serialize)]
struct GradCheckRecord<'a> {
    lambda: f64,
    snr_db: f64,
    frames: usize,
    report: &'a GradCheckReport,
}

/// Finite-difference check of the full training gradient, including the
/// harvester path.
pub fn grad_check(cfg: &RunConfig, eh_path: Option<&Path>, out: Option<&Path>) -> Result<PathBuf> {
    let g = &cfg.grad_check;
    let eh = match eh_path {
        Some(p) => load_eh(p)?,
        None => fit(&cfg.eh)?.0,
    };
    let dir = run_dir(out, &format!("grad-check-s{}", g.seed))?;
    let snapshot = serde_json::json!({ "system": cfg.system, "grad_check": g });
    let run = Run::start(dir, "grad-check", &snapshot, seeds(&[("grad_check", g.seed)]), &[GRAD_CHECK_FILE])?;
    let mut rng = stream_rng(g.seed, streams::GRAD_CHECK, 0);
    let mut system = iden_core::system::IdenSystem::new(
        cfg.system.clone(),
        iden_core::phy::SnrFeature::from_range(&cfg.train.snrs_db),
        Some(eh),
        &mut rng,
    )?;
    let draws: Vec<FrameDraw> = (0..g.frames)
        .map(|_| FrameDraw::sample(system.info_bits(), system.symbols_per_frame(), cfg.train.channel, &mut rng))
        .collect();
    let snr = db_to_linear(g.snr_db);
    let (lambda, eps_clip, eps_p) = (g.lambda, cfg.train.eps_clip, cfg.train.eps_p);
    let opts = GradCheckOptions {
        step: g.step,
        floor: 1e-4,
        tolerance: g.tolerance,
        sample: Some((g.samples, g.seed)),
    };
    let before = param_checksum(&system);
    let report = check_gradients(
        &mut system,
        |s, tape| {
            let f = s.forward_batch(tape, &draws, snr, lambda > 0.0, true)?;
            Ok(loss(tape, &f.u, f.probs, f.p_del, lambda, eps_clip, eps_p)?.total)
        },
        &opts,
    )?;
    ensure!(param_checksum(&system) == before, "gradient check altered the parameters");
    write_json(
        &run.path(GRAD_CHECK_FILE),
        &GradCheckRecord {
            lambda,
            snr_db: g.snr_db,
            frames: g.frames,
            report: &report,
        },
    )?;
    println!(
        "checked {} coordinates ({} excluded at kinks); max relative error {:.3e}",
        report.checked(),
        report.excluded,
        report.max_rel_error
    );
    if !report.passed() || report.checked() < g.samples {
        run.finish("failed")?;
        bail!(
            "gradient check failed: {} of {} coordinates checked, max relative error {:.3e} (tolerance {:.1e})",
            report.checked(),
            g.samples,
            report.max_rel_error,
            g.tolerance
        );
    }
    run.finish("ok")
}
