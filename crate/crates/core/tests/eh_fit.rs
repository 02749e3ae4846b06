use iden_core::eh::{fit, max_abs_error, EhFitConfig};
use iden_core::train::param_checksum;

#[test]
fn default_fit_tracks_the_oracle() {
    let cfg = EhFitConfig::default();
    let (model, report) = fit(&cfg).unwrap();
    let p_max = cfg.oracle.p_max_mw;
    assert!(report.converged, "{report:?}");
    assert!(model.frozen);

    let err = max_abs_error(&model, &cfg.holdout_inputs()).unwrap();
    eprintln!("hold-out error {:.3}% of p_max after {} steps", 100.0 * err / p_max, report.steps);
    assert!(err < 0.02 * p_max);

    // the whole operating grid, not only hold-out points
    let hi = 30.0 * cfg.oracle.b;
    let grid: Vec<f64> = (0..=3000).map(|i| hi * f64::from(i) / 3000.0).collect();
    assert!(max_abs_error(&model, &grid).unwrap() < 0.02 * p_max);

    assert!(model.eval(0.0).unwrap().abs() < 0.02 * p_max);
    assert!(model.eval(-1e-3).is_err());
}

#[test]
fn fit_is_reproducible() {
    let cfg = EhFitConfig {
        max_steps: 2000,
        ..Default::default()
    };
    let (a, ra) = fit(&cfg).unwrap();
    let (b, rb) = fit(&cfg).unwrap();
    assert_eq!(param_checksum(&a.net), param_checksum(&b.net));
    assert_eq!(ra, rb);

    let (c, _) = fit(&EhFitConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(param_checksum(&a.net), param_checksum(&c.net));
}

#[test]
fn invalid_oracle_is_rejected() {
    let mut cfg = EhFitConfig::default();
    cfg.oracle.a = -1.0;
    assert!(fit(&cfg).is_err());
}
