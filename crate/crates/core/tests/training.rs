use iden_core::eh::{fit, EhFitConfig, EhModel};
use iden_core::phy::{ChannelKind, SnrFeature};
use iden_core::rng::stream_rng;
use iden_core::system::{IdenSystem, SystemConfig};
use iden_core::train::{param_checksum, train_epochs, validation_ce, TrainConfig};

fn small() -> SystemConfig {
    SystemConfig {
        n: 16,
        k: 8,
        order: 4,
        iterations: 2,
        mapper_hidden: vec![16],
        demapper_hidden: vec![16],
        ..Default::default()
    }
}

fn train_cfg(lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda,
        batch_size: 200,
        epochs: 2,
        steps_per_epoch: 15,
        learning_rate: 0.01,
        snrs_db: vec![8.0, 12.0],
        seed,
        ..Default::default()
    }
}

fn system(seed: u64, eh: Option<EhModel>) -> IdenSystem {
    let snr = SnrFeature::from_range(&[8.0, 12.0]);
    IdenSystem::new(small(), snr, eh, &mut stream_rng(seed, 99, 0)).unwrap()
}

#[test]
fn cross_entropy_falls_for_every_seed() {
    for seed in 0..3 {
        let mut sys = system(seed, None);
        let before = validation_ce(&sys, 10.0, ChannelKind::Rayleigh, 500, 1234).unwrap();
        let report = train_epochs(&mut sys, &train_cfg(0.0, seed)).unwrap();
        let after = validation_ce(&sys, 10.0, ChannelKind::Rayleigh, 500, 1234).unwrap();
        eprintln!("seed {seed}: validation CE {before:.3} -> {after:.3}");
        assert!(after < before, "seed {seed}: {before} -> {after}");
        assert_eq!(report.steps.len(), 60);
        assert!(report.steps.iter().all(|s| s.wet == 0.0));
    }
}

#[test]
fn same_seed_same_weights() {
    let run = |seed| {
        let mut sys = system(seed, None);
        train_epochs(&mut sys, &train_cfg(0.0, seed)).unwrap().checksum
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn energy_term_needs_a_frozen_harvester() {
    let mut sys = system(0, None);
    assert!(train_epochs(&mut sys, &train_cfg(0.05, 0)).is_err());

    let (mut eh, _) = fit(&EhFitConfig {
        max_steps: 500,
        ..Default::default()
    })
    .unwrap();
    eh.frozen = false;
    let mut sys = system(0, Some(eh));
    assert!(train_epochs(&mut sys, &train_cfg(0.05, 0)).is_err());
}

#[test]
fn training_leaves_the_harvester_untouched() {
    let (eh, _) = fit(&EhFitConfig::default()).unwrap();
    let before = param_checksum(&eh);
    let mut sys = system(2, Some(eh));
    let report = train_epochs(&mut sys, &train_cfg(0.05, 2)).unwrap();
    assert_eq!(report.eh_checksum.as_deref(), Some(before.as_str()));
    assert_eq!(param_checksum(sys.eh.as_ref().unwrap()), before);
    assert!(report.steps.iter().all(|s| s.wet > 0.0 && s.total.is_finite()));
}
