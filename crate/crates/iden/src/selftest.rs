//! Quick installation check: a few seconds of the exact oracles and
//! analytic anchors.

use anyhow::Result;
use iden_core::bp::BpDecoder;
use iden_core::eh::EhOracle;
use iden_core::phy::{split_power, ChannelKind, Modulation, SnrFeature, SymbolBlock};
use iden_core::polar::PolarCode;
use iden_core::reference::{dense_encode, generator_matrix, ReferenceBp};
use iden_core::rng::stream_rng;
use iden_core::stats::{binomial_stderr, db_to_linear, q_function};
use iden_core::system::{BaselineSystem, FrameDraw, IdenSystem, LinkSystem, SystemConfig};
use rand::{Rng, RngCore};

use crate::systems::baseline_meter;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn encoder() -> Result<String> {
    for n in [2usize, 4, 8, 16] {
        let code = PolarCode::new(n, n)?;
        let g = generator_matrix(n);
        for word in 0..1u32 << n {
            let u: Vec<u8> = (0..n).map(|i| ((word >> i) & 1) as u8).collect();
            anyhow::ensure!(*code.encode(&u)? == *dense_encode(&g, &u), "N={n}, u={u:?}");
        }
    }
    Ok("exhaustive up to N = 16".into())
}

fn bp_reference() -> Result<String> {
    let code = PolarCode::new(64, 32)?;
    let mut rng = stream_rng(1, 0, 0);
    for t in [1, 3] {
        let fast = BpDecoder::new(&code, t)?;
        let slow = ReferenceBp::new(&code, t);
        for _ in 0..300 {
            let llr: Vec<f64> = (0..64).map(|_| rng.random_range(-12.0..12.0)).collect();
            anyhow::ensure!(fast.decision_llrs(&llr)? == slow.decision_llrs(&llr), "T={t}");
        }
    }
    Ok("600 random frames bit-exact".into())
}

fn noiseless() -> Result<String> {
    let code = PolarCode::new(64, 32)?;
    let dec = BpDecoder::new(&code, 3)?;
    let mut rng = stream_rng(2, 0, 0);
    for _ in 0..200 {
        let info: Vec<u8> = (0..32).map(|_| (rng.next_u32() & 1) as u8).collect();
        let u = code.embed(&info)?;
        let llr: Vec<f64> = code.encode(&u)?.iter().map(|&b| if b == 0 { 50.0 } else { -50.0 }).collect();
        anyhow::ensure!(dec.decode_hard(&llr)? == u, "noiseless frame decoded wrongly");
    }
    Ok("200 frames".into())
}

fn bpsk_anchor() -> Result<String> {
    let cfg = SystemConfig::default();
    let sys = BaselineSystem::uncoded(Modulation::Psk(2), 1000, baseline_meter(&cfg, None))?;
    let gamma_db = 4.0;
    let mut rng = stream_rng(3, 0, 0);
    let (mut errors, mut bits) = (0u64, 0u64);
    for _ in 0..4 {
        let draws: Vec<FrameDraw> = (0..100)
            .map(|_| FrameDraw::sample(1000, 1000, ChannelKind::Awgn, &mut rng))
            .collect();
        for o in sys.simulate(db_to_linear(gamma_db), &draws)? {
            errors += u64::from(o.bit_errors);
            bits += u64::from(o.bits);
        }
    }
    let ber = errors as f64 / bits as f64;
    let q = q_function((2.0 * db_to_linear(gamma_db)).sqrt());
    let tol = 3.0 * binomial_stderr(q, bits);
    anyhow::ensure!((ber - q).abs() <= tol, "BER {ber:.4e} vs Q {q:.4e} ± {tol:.1e}");
    Ok(format!("BER {ber:.4e} vs Q {q:.4e} at 4 dB"))
}

fn power() -> Result<String> {
    let cfg = SystemConfig {
        mapper_hidden: vec![16],
        demapper_hidden: vec![16],
        ..Default::default()
    };
    let sys = IdenSystem::new(cfg, SnrFeature::default(), None, &mut stream_rng(4, 0, 0))?;
    let mut worst = 0.0f64;
    for snr_db in [0.0, 15.0, 30.0] {
        worst = worst.max((sys.mapper.constellation(db_to_linear(snr_db))?.mean_power() - 1.0).abs());
    }
    anyhow::ensure!(worst <= 1e-9, "mapper mean power off by {worst:e}");
    let y = SymbolBlock::new((0..44).map(|i| (f64::from(i) * 0.37).sin()).collect())?;
    let (d, e) = split_power(&y, 0.3)?;
    let gap = (d.energy() + e.energy() - y.energy()).abs();
    anyhow::ensure!(gap <= 1e-9, "split loses {gap:e}");
    anyhow::ensure!(EhOracle::default().eval(0.0)?.abs() < 1e-12, "harvester output at zero input");
    Ok(format!("mean power within {worst:.1e}"))
}

pub fn run() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Result<String>); 5] = [
        ("encoder vs dense generator", encoder),
        ("min-sum BP vs reference", bp_reference),
        ("noiseless decoding", noiseless),
        ("uncoded BPSK vs Q-function", bpsk_anchor),
        ("power normalization and split", power),
    ];
    checks
        .iter()
        .map(|&(name, f)| match f() {
            Ok(detail) => Check {
                name,
                passed: true,
                detail,
            },
            Err(e) => Check {
                name,
                passed: false,
                detail: format!("{e:#}"),
            },
        })
        .collect()
}
