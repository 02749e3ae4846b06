//! Acceptance run: every primary criterion at its pinned tolerance, one
//! PASS/FAIL line each. Lines go straight to stderr so they show up even
//! when libtest captures output.
//!
//! Trains 15 full-size links (about 20 minutes on one core).

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use iden::runner::RayonRunner;
use iden::systems::{baseline, baseline_meter, init_system};
use iden_core::bp::BpDecoder;
use iden_core::eh::{fit, max_abs_error, EhFitConfig, EhModel};
use iden_core::harness::{compare, export_constellation, to_csv, StopRule, SweepRow, SweepSpec, SystemTag};
use iden_core::nn::{grad_check, GradCheckOptions};
use iden_core::phy::{
    gaussian_noise, max_log_llrs, pad_bits, split_power, symbol_indices, ChannelKind, Constellation, Modulation,
    SymbolBlock,
};
use iden_core::polar::PolarCode;
use iden_core::reference::{dense_encode, generator_matrix, ReferenceBp};
use iden_core::rng::stream_rng;
use iden_core::stats::{binomial_stderr, db_to_linear, q_function, sign_test_p_value};
use iden_core::system::{BaselineSystem, FrameDraw, IdenSystem, LinkSystem, SystemConfig};
use iden_core::train::{loss, param_checksum, train_epochs, TrainConfig};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SEEDS: [u64; 3] = [0, 1, 2];
const LAMBDAS: [f64; 3] = [0.0, 0.05, 0.25];
const LAMBDA_MAIN: f64 = 0.01;
const K_STDERR: f64 = 3.0;

struct Outcome {
    name: &'static str,
    passed: bool,
}

fn report(out: &mut Vec<Outcome>, name: &'static str, passed: bool, detail: String) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    out.push(Outcome { name, passed });
}

fn note(text: &str) {
    let _ = writeln!(std::io::stderr(), "    {text}");
}

fn random_bits(len: usize, rng: &mut impl RngCore) -> Vec<u8> {
    (0..len).map(|_| (rng.next_u32() & 1) as u8).collect()
}

fn encoder_oracle() -> (bool, String) {
    let mut ok = true;
    for n in [2usize, 4, 8] {
        let code = PolarCode::new(n, n).unwrap();
        let g = generator_matrix(n);
        for word in 0..1u32 << n {
            let u: Vec<u8> = (0..n).map(|i| ((word >> i) & 1) as u8).collect();
            ok &= *code.encode(&u).unwrap() == *dense_encode(&g, &u);
        }
    }
    let code = PolarCode::new(64, 64).unwrap();
    let g = generator_matrix(64);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..10_000 {
        let u = random_bits(64, &mut rng);
        ok &= *code.encode(&u).unwrap() == *dense_encode(&g, &u);
    }
    (ok, "exhaustive N = 2, 4, 8 and 10^4 random inputs at N = 64".into())
}

fn bp_reference() -> (bool, String) {
    let code = PolarCode::new(64, 32).unwrap();
    let psk = Constellation::psk(8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut mismatches = 0;
    for t in [1usize, 3, 5] {
        let fast = BpDecoder::new(&code, t).unwrap();
        let slow = ReferenceBp::new(&code, t);
        for _ in 0..10_000 {
            let snr_db = rng.random_range(0.0..30.0);
            let c = code.encode(&code.embed(&random_bits(32, &mut rng)).unwrap()).unwrap();
            let idx = symbol_indices(&pad_bits(&c, 3), 3).unwrap();
            let h = gaussian_noise(2 * idx.len(), 0.5, &mut rng);
            let var = 1.0 / (2.0 * db_to_linear(snr_db));
            let noise = gaussian_noise(2 * idx.len(), var, &mut rng);
            let mut y = Vec::with_capacity(2 * idx.len());
            for (s, &k) in idx.iter().enumerate() {
                let (xr, xi) = psk.point(k);
                let (hr, hi) = (h[2 * s], h[2 * s + 1]);
                y.push(hr * xr - hi * xi + noise[2 * s]);
                y.push(hr * xi + hi * xr + noise[2 * s + 1]);
            }
            let mut llr = max_log_llrs(&y, &h, var, &psk).unwrap();
            llr.truncate(64);
            if fast.decision_llrs(&llr).unwrap() != slow.decision_llrs(&llr)
                || *fast.decode_hard(&llr).unwrap() != *slow.decode(&llr)
            {
                mismatches += 1;
            }
        }
    }
    (mismatches == 0, format!("{mismatches} mismatches in 3 × 10^4 8-PSK Rayleigh frames (T = 1, 3, 5)"))
}

fn noiseless() -> (bool, String) {
    let code = PolarCode::new(64, 32).unwrap();
    let dec = BpDecoder::new(&code, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut errors = 0;
    for _ in 0..1000 {
        let u = code.embed(&random_bits(32, &mut rng)).unwrap();
        let llr: Vec<f64> = code.encode(&u).unwrap().iter().map(|&b| if b == 0 { 1e3 } else { -1e3 }).collect();
        errors += dec.decode_hard(&llr).unwrap().iter().zip(u.iter()).filter(|(a, b)| a != b).count();
    }
    (errors == 0, format!("{errors} bit errors over 10^3 frames"))
}

fn gradients(eh: &EhModel) -> (bool, String) {
    let (mut worst, mut checked, mut scaling) = (0.0f64, 0, 0);
    let mut all_passed = true;
    for seed in 0..5u64 {
        let mut rng = stream_rng(seed, 201, 0);
        let mut sys = IdenSystem::new(
            SystemConfig::default(),
            iden_core::phy::SnrFeature::from_range(&[20.0, 24.0]),
            Some(eh.clone()),
            &mut rng,
        )
        .unwrap();
        let draws: Vec<FrameDraw> = (0..3)
            .map(|_| FrameDraw::sample(32, sys.symbols_per_frame(), ChannelKind::Rayleigh, &mut rng))
            .collect();
        let snr = db_to_linear(14.0);
        let opts = GradCheckOptions {
            step: 1e-5,
            floor: 1e-4,
            tolerance: 1e-4,
            sample: Some((20, seed)),
        };
        let r = grad_check(
            &mut sys,
            |s, tape| {
                let f = s.forward_batch(tape, &draws, snr, true, true)?;
                Ok(loss(tape, &f.u, f.probs, f.p_del, 0.5, 1e-7, 1e-9)?.total)
            },
            &opts,
        )
        .unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.checked();
        scaling += r.entries.iter().filter(|e| e.param.starts_with("bp.")).count();
        all_passed &= r.passed();
    }
    (
        all_passed && checked == 100 && worst < 1e-4,
        format!("{checked} non-kink coordinates ({scaling} in α/β), max relative error {worst:.2e} (< 1e-4)"),
    )
}

fn bpsk_anchor() -> (bool, String) {
    let sys = BaselineSystem::uncoded(Modulation::Psk(2), 1000, baseline_meter(&SystemConfig::default(), None)).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for gamma_db in [2.0, 4.0, 6.0] {
        let mut rng = stream_rng(104, 0, gamma_db as u64);
        let (mut e, mut n) = (0u64, 0u64);
        for _ in 0..10 {
            let draws: Vec<FrameDraw> = (0..100)
                .map(|_| FrameDraw::sample(1000, 1000, ChannelKind::Awgn, &mut rng))
                .collect();
            for o in sys.simulate(db_to_linear(gamma_db), &draws).unwrap() {
                e += u64::from(o.bit_errors);
                n += u64::from(o.bits);
            }
        }
        let ber = e as f64 / n as f64;
        let q = q_function((2.0 * db_to_linear(gamma_db)).sqrt());
        let z = (ber - q) / binomial_stderr(q, n);
        ok &= z.abs() <= K_STDERR;
        parts.push(format!("{gamma_db} dB {ber:.3e} vs {q:.3e} ({z:+.2}σ)"));
    }
    (ok, parts.join("; "))
}

fn median_index(rows: &[&SweepRow]) -> usize {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| rows[a].ber.total_cmp(&rows[b].ber));
    idx[idx.len() / 2]
}

/// Median-seed BER at each SNR of `a` against `b`: `a` must not be worse
/// than `b` by more than 3 standard errors.
fn median_not_worse(a: &[Vec<SweepRow>], b: &[Vec<SweepRow>], label: &str) -> (bool, Vec<String>) {
    let mut ok = true;
    let mut lines = Vec::new();
    for p in 0..a[0].len() {
        let ra: Vec<&SweepRow> = a.iter().map(|rows| &rows[p]).collect();
        let rb: Vec<&SweepRow> = b.iter().map(|rows| &rows[p]).collect();
        let (ma, mb) = (ra[median_index(&ra)], rb[median_index(&rb)]);
        let pass = ma.proportion().not_worse_than(&mb.proportion(), K_STDERR);
        ok &= pass;
        let se = (ma.ber_stderr.powi(2) + mb.ber_stderr.powi(2)).sqrt();
        lines.push(format!(
            "{:>4} dB {label}: {:.3e} vs {:.3e} (diff {:+.2} se) {}",
            ma.snr_db,
            ma.ber,
            mb.ber,
            if se > 0.0 { (ma.ber - mb.ber) / se } else { 0.0 },
            if pass { "ok" } else { "WORSE" }
        ));
    }
    (ok, lines)
}

struct Trained {
    system: IdenSystem,
    eh_ok: bool,
}

fn train_one(eh: &EhModel, lambda: f64, iters: usize, seed: u64) -> Trained {
    let cfg = SystemConfig {
        iterations: iters,
        ..Default::default()
    };
    let tc = TrainConfig {
        lambda,
        seed,
        ..Default::default()
    };
    let before = param_checksum(eh);
    let mut system = init_system(&cfg, &tc, Some(eh.clone())).unwrap();
    let t = Instant::now();
    let r = train_epochs(&mut system, &tc).unwrap();
    note(&format!(
        "trained λ={lambda} T={iters} seed={seed} in {:.0} s, final CE {:.4}",
        t.elapsed().as_secs_f64(),
        r.steps.last().map_or(f64::NAN, |s| s.ce)
    ));
    let eh_ok = r.eh_checksum.as_deref() == Some(before.as_str())
        && system.eh.as_ref().map(param_checksum).as_deref() == Some(before.as_str());
    Trained { system, eh_ok }
}

fn sweep_spec() -> SweepSpec {
    SweepSpec {
        snrs_db: (8..=15).map(|i| f64::from(2 * i)).collect(),
        channel: ChannelKind::Rayleigh,
        stop: StopRule {
            min_errors: 100,
            min_frames: 1000,
            max_frames: 10_000,
        },
        chunk_frames: 500,
        seed: 7,
    }
}

fn sweep_learned(sys: &IdenSystem, lambda: f64, spec: &SweepSpec, runner: &RayonRunner) -> Vec<SweepRow> {
    let tag = SystemTag {
        name: "learned".into(),
        lambda: Some(lambda),
        iters: Some(sys.config.iterations),
    };
    compare(&[(tag, sys as &(dyn LinkSystem + Sync))], spec, runner).unwrap()
}

fn sweep_baseline(name: &str, iters: usize, scaling: f64, eh: &EhModel, spec: &SweepSpec, runner: &RayonRunner) -> Vec<SweepRow> {
    let cfg = SystemConfig::default();
    let (tag, sys) = baseline(name, &cfg, iters, scaling, baseline_meter(&cfg, Some(eh))).unwrap();
    compare(&[(tag, sys.as_ref())], spec, runner).unwrap()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

#[test]
fn acceptance() {
    let mut out = Vec::new();
    let _ = writeln!(std::io::stderr());

    let ((ok, d), t) = timed(encoder_oracle);
    report(&mut out, "encoder oracle", ok && t < Duration::from_secs(10), format!("{d}; {:.2} s (< 10 s)", t.as_secs_f64()));

    let ((ok, d), t) = timed(bp_reference);
    report(&mut out, "BP reference equivalence", ok && t < Duration::from_secs(120), format!("{d}; {:.1} s (< 120 s)", t.as_secs_f64()));

    let (ok, d) = noiseless();
    report(&mut out, "noiseless correctness", ok, d);

    let eh_cfg = EhFitConfig::default();
    let (eh, fit_report) = fit(&eh_cfg).unwrap();

    let ((ok, d), t) = timed(|| gradients(&eh));
    report(&mut out, "gradient integrity", ok && t < Duration::from_secs(300), format!("{d}; {:.1} s (< 300 s)", t.as_secs_f64()));

    let (ok, d) = bpsk_anchor();
    report(&mut out, "analytic BER anchor", ok, d);

    // training campaign shared by the remaining criteria
    let campaign = Instant::now();
    let mut trained: BTreeMap<(u64, usize, u64), Trained> = BTreeMap::new();
    let key = |lambda: f64, iters: usize, seed: u64| (lambda.to_bits(), iters, seed);
    for &seed in &SEEDS {
        for iters in [1, 3] {
            trained.insert(key(LAMBDA_MAIN, iters, seed), train_one(&eh, LAMBDA_MAIN, iters, seed));
        }
        for &lambda in &LAMBDAS {
            trained.insert(key(lambda, 3, seed), train_one(&eh, lambda, 3, seed));
        }
    }
    let spec = sweep_spec();
    let runner = RayonRunner::new(None).unwrap();

    // power invariants over every trained mapper at every sweep SNR
    let mut worst_power = 0.0f64;
    let mut exports = 0;
    let mut power_ok = true;
    for t in trained.values() {
        for &s in &spec.snrs_db {
            let cons = t.system.mapper.constellation(db_to_linear(s)).unwrap();
            worst_power = worst_power.max((cons.mean_power() - 1.0).abs());
            power_ok &= export_constellation(&cons, "learned", s).is_ok();
            exports += 1;
        }
    }
    for m in [Modulation::Psk(2), Modulation::Psk(8), Modulation::Qam(4), Modulation::Qam(16), Modulation::Qam(64)] {
        let cons = m.constellation().unwrap();
        worst_power = worst_power.max((cons.mean_power() - 1.0).abs());
        power_ok &= export_constellation(&cons, &m.to_string(), 0.0).is_ok();
        exports += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst_split = 0.0f64;
    for _ in 0..1000 {
        let y = SymbolBlock::new((0..44).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let rho = rng.random_range(0.0..=1.0);
        let (d, e) = split_power(&y, rho).unwrap();
        worst_split = worst_split.max((d.energy() + e.energy() - y.energy()).abs());
    }
    report(
        &mut out,
        "normalization/power",
        power_ok && worst_power <= 1e-9 && worst_split <= 1e-9,
        format!("{exports} exports, max |mean power − 1| {worst_power:.1e}; split energy gap {worst_split:.1e} (≤ 1e-9)"),
    );

    let p_max = eh_cfg.oracle.p_max_mw;
    let grid: Vec<f64> = (0..=3000).map(|i| 30.0 * eh_cfg.oracle.b * f64::from(i) / 3000.0).collect();
    let grid_err = max_abs_error(&eh, &grid).unwrap().max(max_abs_error(&eh, &eh_cfg.holdout_inputs()).unwrap());
    let eh_frozen = eh.frozen && trained.values().all(|t| t.eh_ok);
    report(
        &mut out,
        "EH fidelity",
        grid_err < 0.02 * p_max && eh_frozen,
        format!(
            "max error {:.3}% of p_max (< 2%) after {} fit steps; harvester checksum unchanged across {} trainings: {eh_frozen}",
            100.0 * grid_err / p_max,
            fit_report.steps,
            trained.len()
        ),
    );

    // sweeps, on common random numbers
    let rows = |lambda: f64, iters: usize| -> Vec<Vec<SweepRow>> {
        SEEDS
            .iter()
            .map(|&s| sweep_learned(&trained[&key(lambda, iters, s)].system, lambda, &spec, &runner))
            .collect()
    };
    let t1 = rows(LAMBDA_MAIN, 1);
    let t3 = rows(LAMBDA_MAIN, 3);
    let (ok, lines) = median_not_worse(&t3, &t1, "T=3 vs T=1");
    for l in &lines {
        note(l);
    }
    report(
        &mut out,
        "iteration trend",
        ok,
        format!(
            "median of {} seeds at {} SNR points, 3 stderr; campaign so far {:.0} s",
            SEEDS.len(),
            spec.snrs_db.len(),
            campaign.elapsed().as_secs_f64()
        ),
    );

    let by_lambda: Vec<Vec<Vec<SweepRow>>> = LAMBDAS.iter().map(|&l| rows(l, 3)).collect();
    let (mut p_up, mut p_down, mut b_worse, mut b_better) = (0u64, 0u64, 0u64, 0u64);
    for pair in 0..LAMBDAS.len() - 1 {
        for s in 0..SEEDS.len() {
            for p in 0..spec.snrs_db.len() {
                let (lo, hi) = (&by_lambda[pair][s][p], &by_lambda[pair + 1][s][p]);
                match hi.mean_pdel_mw.total_cmp(&lo.mean_pdel_mw) {
                    std::cmp::Ordering::Greater => p_up += 1,
                    std::cmp::Ordering::Less => p_down += 1,
                    std::cmp::Ordering::Equal => {}
                }
                match hi.ber.total_cmp(&lo.ber) {
                    std::cmp::Ordering::Greater => b_worse += 1,
                    std::cmp::Ordering::Less => b_better += 1,
                    std::cmp::Ordering::Equal => {}
                }
            }
        }
    }
    for (i, &l) in LAMBDAS.iter().enumerate() {
        let mean_p: f64 = by_lambda[i].iter().flatten().map(|r| r.mean_pdel_mw).sum::<f64>()
            / (SEEDS.len() * spec.snrs_db.len()) as f64;
        let mean_ber: f64 = by_lambda[i].iter().flatten().map(|r| r.ber).sum::<f64>()
            / (SEEDS.len() * spec.snrs_db.len()) as f64;
        note(&format!("λ = {l}: mean P_del {mean_p:.4} mW, mean BER {mean_ber:.3e}"));
    }
    let p_energy = sign_test_p_value(p_up, p_down);
    let p_ber_improves = sign_test_p_value(b_better, b_worse);
    let psk = |eh: &EhModel| to_csv(&sweep_baseline("psk8", 3, 1.0, eh, &spec, &runner));
    // every λ run shares the harvester, so the baseline sees the same meter
    let ref_csv = psk(&eh);
    let invariant = LAMBDAS.iter().all(|&l| {
        let sys = &trained[&key(l, 3, SEEDS[0])].system;
        psk(sys.eh.as_ref().unwrap()) == ref_csv
    });
    report(
        &mut out,
        "λ trade-off trend",
        p_energy < 0.05 && p_ber_improves >= 0.05 && invariant,
        format!(
            "P_del rises in {p_up}/{} adjacent-λ pairs (sign test p = {p_energy:.2e} < 0.05); \
             BER better in {b_better}, worse in {b_worse} (p of improvement = {p_ber_improves:.2} ≥ 0.05); \
             8-PSK rows identical across λ: {invariant}",
            p_up + p_down
        ),
    );

    let base_plain = vec![sweep_baseline("psk8", 3, 1.0, &eh, &spec, &runner)];
    let base_scaled = vec![sweep_baseline("psk8", 3, 0.9375, &eh, &spec, &runner)];
    let high: Vec<usize> = (0..spec.snrs_db.len()).filter(|&p| spec.snrs_db[p] >= 20.0).collect();
    let pick = |rows: &[Vec<SweepRow>]| -> Vec<Vec<SweepRow>> {
        rows.iter().map(|r| high.iter().map(|&p| r[p].clone()).collect()).collect()
    };
    let (ok_plain, lines_plain) = median_not_worse(&pick(&t3), &pick(&base_plain), "learned vs psk8 α=β=1");
    let (ok_scaled, lines_scaled) = median_not_worse(&pick(&t3), &pick(&base_scaled), "learned vs psk8 α=β=0.9375");
    for l in lines_plain.iter().chain(&lines_scaled) {
        note(l);
    }
    // the gain at BER 1e-3 is reported, not asserted
    for (p, &s) in spec.snrs_db.iter().enumerate() {
        let ber: Vec<f64> = t3.iter().map(|r| r[p].ber).collect();
        note(&format!("{s:>4} dB: learned {:?} | psk8 {:.3e}", ber.iter().map(|b| format!("{b:.2e}")).collect::<Vec<_>>(), base_plain[0][p].ber));
    }
    report(
        &mut out,
        "learned vs baseline",
        ok_plain && ok_scaled,
        format!("λ = {LAMBDA_MAIN}, T = 3, Rayleigh, SNR ≥ 20 dB, median of {} seeds, 3 stderr, both decoder scalings", SEEDS.len()),
    );

    let det_spec = SweepSpec {
        snrs_db: vec![16.0, 22.0, 28.0],
        stop: StopRule {
            min_errors: 100,
            min_frames: 1000,
            max_frames: 3000,
        },
        chunk_frames: 250,
        ..sweep_spec()
    };
    let learned = &trained[&key(LAMBDA_MAIN, 3, SEEDS[0])].system;
    let cfg = SystemConfig::default();
    let (ptag, psys) = baseline("psk8", &cfg, 3, 1.0, baseline_meter(&cfg, Some(&eh))).unwrap();
    let ltag = SystemTag {
        name: "learned".into(),
        lambda: Some(LAMBDA_MAIN),
        iters: Some(3),
    };
    let hashes: Vec<String> = [1usize, 2, 4]
        .iter()
        .map(|&w| {
            let r = RayonRunner::new(Some(w)).unwrap();
            let systems: [(SystemTag, &(dyn LinkSystem + Sync)); 2] =
                [(ltag.clone(), learned), (ptag.clone(), psys.as_ref())];
            let csv = to_csv(&compare(&systems, &det_spec, &r).unwrap());
            Sha256::digest(csv.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
        })
        .collect();
    report(
        &mut out,
        "determinism",
        hashes.windows(2).all(|w| w[0] == w[1]),
        format!("CSV SHA-256 with 1, 2, 4 workers: {}", hashes.iter().map(|h| &h[..16]).collect::<Vec<_>>().join(", ")),
    );

    let failed: Vec<&str> = out.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    let _ = writeln!(std::io::stderr(), "{} of {} criteria passed", out.len() - failed.len(), out.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
