use proptest::prelude::*;
use stormbench_core::parcel::{integrate_updraft, BuoyancyProfile};

#[test]
fn constant_buoyancy_without_drag() {
    let profile = BuoyancyProfile::from_fn(1000.0, 1.0, |_| 0.01);
    let up = integrate_updraft(&profile, 0.0, 1.0).unwrap();
    let exact = (2.0f64 * 0.01 * 1000.0).sqrt();
    assert!((up.w_max - exact).abs() / exact < 1e-3);
    assert!((up.w_max - 4.472).abs() < 1e-3);
    assert_eq!(up.stop_height, None);
}

/// `w²(z) = (B/K)(1 − exp(−2Kz))` for constant B and drag K.
fn analytic_w(b: f64, k: f64, z: f64) -> f64 {
    (b / k * (1.0 - (-2.0 * k * z).exp())).sqrt()
}

#[test]
fn halving_the_step_at_least_halves_the_error() {
    let (b, k, top) = (0.01, 2e-3, 1000.0);
    let profile = BuoyancyProfile::from_fn(top, 1.0, |_| b);
    let err = |dz: f64| {
        let up = integrate_updraft(&profile, k, dz).unwrap();
        (up.w.last().unwrap() - analytic_w(b, k, top)).abs()
    };
    let steps = [100.0, 50.0, 25.0, 12.5];
    for pair in steps.windows(2) {
        let (coarse, fine) = (err(pair[0]), err(pair[1]));
        assert!(coarse > 0.0);
        assert!(fine <= coarse / 2.0, "dz {} -> {}: {coarse} -> {fine}", pair[0], pair[1]);
    }
}

#[test]
fn more_drag_never_speeds_the_updraft() {
    let profile = BuoyancyProfile::from_fn(3000.0, 10.0, |z| 0.03 * (1.0 - z / 1200.0));
    let ks: Vec<f64> = (0..10).map(|i| i as f64 * 4e-4).collect();
    let runs: Vec<Vec<f64>> = ks.iter().map(|&k| integrate_updraft(&profile, k, 10.0).unwrap().w).collect();
    for pair in runs.windows(2) {
        for (lo_k, hi_k) in pair[0].iter().zip(&pair[1]) {
            assert!(hi_k <= lo_k);
        }
    }
}

proptest! {
    #[test]
    fn velocity_is_finite_and_non_negative(
        b0 in -0.05..0.08f64,
        slope in -1e-4..1e-4f64,
        k in 0.0..5e-3f64,
        dz in 1.0..50.0f64,
    ) {
        let profile = BuoyancyProfile::from_fn(4000.0, 10.0, |z| b0 + slope * z);
        let up = integrate_updraft(&profile, k, dz).unwrap();
        prop_assert!(up.w.iter().all(|w| w.is_finite() && *w >= 0.0));
        prop_assert!(up.w_max >= 0.0);
    }
}
