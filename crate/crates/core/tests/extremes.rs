use probunet_core::extremes::{
    bootstrap_bands, coverage_verdict, default_period_grid, empirical_return_levels, fit_gev, return_level,
    BootstrapConfig, GevParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn mle_recovers_generating_parameters() {
    let truth = GevParams::new(10.0, 2.0, 0.1).unwrap();
    let sample = truth.sample(&mut ChaCha8Rng::seed_from_u64(2024), 10_000);
    let fit = fit_gev(&sample).unwrap();
    assert!((fit.mu - 10.0).abs() < 0.1, "{fit:?}");
    assert!((fit.sigma - 2.0).abs() < 0.1, "{fit:?}");
    assert!((fit.xi - 0.1).abs() < 0.05, "{fit:?}");
    assert!(fit.log_likelihood(&sample) >= truth.log_likelihood(&sample));
}

#[test]
fn fit_is_at_least_as_likely_as_the_truth_on_short_records() {
    for (k, xi) in [-0.3, 0.0, 0.3].into_iter().enumerate() {
        let truth = GevParams::new(5.0, 1.5, xi).unwrap();
        let sample = truth.sample(&mut ChaCha8Rng::seed_from_u64(k as u64), 30);
        let fit = fit_gev(&sample).unwrap();
        assert!(fit.log_likelihood(&sample) >= truth.log_likelihood(&sample) - 1e-9);
    }
}

#[test]
fn cdf_quantile_round_trip_in_every_regime() {
    for xi in [-0.3, 0.0, 0.3] {
        let g = GevParams::new(1.0, 2.0, xi).unwrap();
        for i in 1..200 {
            let p = i as f64 / 200.0;
            let x = g.quantile(p);
            assert!((g.quantile(g.cdf(x)) - x).abs() < 1e-10 * (1.0 + x.abs()), "xi={xi} p={p}");
            let t = 1.0 / (1.0 - p);
            if t > 1.0 {
                assert!((return_level(&g, t).unwrap() - g.quantile(1.0 - 1.0 / t)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn bootstrap_bands_bracket_the_estimate_and_narrow_with_more_years() {
    let truth = GevParams::new(20.0, 4.0, 0.1).unwrap();
    let periods = default_period_grid();
    let cfg = BootstrapConfig { seed: 9, ..BootstrapConfig::default() };
    let short = bootstrap_bands(&truth, 30, &periods, &cfg, (0, 0)).unwrap();
    let long = bootstrap_bands(&truth, 100, &periods, &cfg, (0, 0)).unwrap();
    for j in 0..periods.len() {
        assert!(short.lower95[j] <= short.point[j] && short.point[j] <= short.upper95[j]);
        assert!(long.upper95[j] - long.lower95[j] < short.upper95[j] - short.lower95[j]);
        if j > 0 {
            assert!(short.point[j] >= short.point[j - 1]);
        }
    }

    let half = bootstrap_bands(&truth, 30, &periods, &BootstrapConfig { replicates: 500, ..cfg }, (0, 0)).unwrap();
    for j in 0..periods.len() {
        let width = short.upper95[j] - short.lower95[j];
        assert!((half.upper95[j] - short.upper95[j]).abs() < 0.1 * width);
        assert!((half.lower95[j] - short.lower95[j]).abs() < 0.1 * width);
    }
}

#[test]
fn self_consistency_coverage_is_good() {
    let mut inside = 0;
    let mut total = 0;
    for k in 0..10u64 {
        let truth = GevParams::new(30.0, 6.0, 0.05).unwrap();
        let maxima = truth.sample(&mut ChaCha8Rng::seed_from_u64(100 + k), 30);
        let fit = fit_gev(&maxima).unwrap();
        let curve =
            bootstrap_bands(&fit, 30, &default_period_grid(), &BootstrapConfig { seed: k, ..Default::default() }, (0, 0))
                .unwrap();
        let c = coverage_verdict(&curve, &empirical_return_levels(&maxima).unwrap()).unwrap();
        inside += c.inside;
        total += c.evaluated;
    }
    assert!(inside as f64 / total as f64 >= 0.95, "{inside}/{total}");
}
