use iden_core::bp::BpDecoder;
use iden_core::eh::{fit, EhFitConfig};
use iden_core::nn::{grad_check, GradCheckOptions, Parameterized, Tape, Tensor};
use iden_core::phy::{ChannelKind, SnrFeature};
use iden_core::polar::PolarCode;
use iden_core::rng::stream_rng;
use iden_core::stats::db_to_linear;
use iden_core::system::{FrameDraw, IdenSystem, SystemConfig};
use iden_core::train::loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exposes only the BP scaling tensors.
struct Scaling(BpDecoder);

impl Parameterized for Scaling {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("alpha".into(), self.0.alpha()), ("beta".into(), self.0.beta())]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let (a, b) = self.0.scaling_mut();
        vec![("alpha".into(), a), ("beta".into(), b)]
    }
}

fn opts(count: usize, seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        floor: 1e-4,
        tolerance: 1e-4,
        sample: Some((count, seed)),
    }
}

#[test]
fn bp_scaling_gradients_match_differences() {
    let code = PolarCode::new(16, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut dec = BpDecoder::new(&code, 3).unwrap();
    let (a, b) = dec.scaling_mut();
    for v in a.values_mut().iter_mut().chain(b.values_mut()) {
        *v = rng.random_range(0.6..1.4);
    }
    let llr: Vec<f64> = (0..3 * 16).map(|_| rng.random_range(-6.0..6.0)).collect();
    let mut model = Scaling(dec);
    let report = grad_check(
        &mut model,
        |m, tape| {
            let x = tape.constant(3, 16, llr.clone());
            let p = m.0.decode_soft(tape, x, Some((0, 1)))?;
            Ok(tape.mean(p))
        },
        &opts(60, 1),
    )
    .unwrap();
    assert!(report.checked() >= 50, "{report:?}");
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn bp_input_gradients_match_differences() {
    let code = PolarCode::new(32, 16).unwrap();
    let dec = BpDecoder::with_scaling(&code, 2, 0.9, 1.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let llr: Vec<f64> = (0..32).map(|_| rng.random_range(-8.0..8.0)).collect();
    let mut tape = Tape::with_branch_tracking();
    let x = tape.input(1, 32, llr.clone());
    let p = dec.decode_soft(&mut tape, x, None).unwrap();
    let sq = tape.square(p);
    let l = tape.sum(sq);
    let digest = tape.branch_digest().unwrap().value();
    tape.backward(l).unwrap();
    let g = tape.grad(x).unwrap().to_vec();
    let eval = |v: &[f64]| {
        let mut t = Tape::with_branch_tracking();
        let x = t.constant(1, 32, v.to_vec());
        let p = dec.decode_soft(&mut t, x, None).unwrap();
        let sq = t.square(p);
        let l = t.sum(sq);
        (t.scalar(l), t.branch_digest().unwrap().value())
    };
    let mut checked = 0;
    for j in 0..32 {
        let h = 1e-6;
        let mut a = llr.clone();
        a[j] += h;
        let mut b = llr.clone();
        b[j] -= h;
        let ((fa, da), (fb, db)) = (eval(&a), eval(&b));
        if da != digest || db != digest {
            continue;
        }
        let num = (fa - fb) / (2.0 * h);
        let rel = (num - g[j]).abs() / num.abs().max(g[j].abs()).max(1e-4);
        assert!(rel < 1e-4, "coordinate {j}: {} vs {num}", g[j]);
        checked += 1;
    }
    assert!(checked > 20);
}

/// Whole link: mapper → channel → demapper → scaled BP → loss, with the
/// frozen harvester contributing through the energy term.
#[test]
fn end_to_end_gradients_match_differences() {
    let (eh, _) = fit(&EhFitConfig::default()).unwrap();
    let mut worst = 0.0f64;
    let mut total = 0;
    for seed in 0..5u64 {
        let mut rng = stream_rng(seed, 1, 0);
        let cfg = SystemConfig {
            mapper_hidden: vec![16],
            demapper_hidden: vec![16],
            ..Default::default()
        };
        let mut sys = IdenSystem::new(cfg, SnrFeature::default(), Some(eh.clone()), &mut rng).unwrap();
        let mut draw_rng = stream_rng(seed, 2, 0);
        let draws: Vec<FrameDraw> = (0..3)
            .map(|_| FrameDraw::sample(sys.config.k, sys.config.symbols_per_frame(), ChannelKind::Rayleigh, &mut draw_rng))
            .collect();
        let snr = db_to_linear(12.0);
        let report = grad_check(
            &mut sys,
            |s, tape| {
                let fwd = s.forward_batch(tape, &draws, snr, true, true)?;
                Ok(loss(tape, &fwd.u, fwd.probs, fwd.p_del, 0.5, 1e-7, 1e-9)?.total)
            },
            &opts(20, seed),
        )
        .unwrap();
        assert_eq!(report.checked(), 20, "too many kink exclusions: {}", report.excluded);
        worst = worst.max(report.max_rel_error);
        total += report.checked();
        assert!(report.passed(), "seed {seed}: {:?}", report.worst());
    }
    assert_eq!(total, 100);
    eprintln!("end-to-end max relative error {worst:.2e}");
}
