//! Moments of the data-generating mechanism and large-sample behaviour of the
//! estimators under it.

use maic::data::effect_modifier_targets;
use maic::method::{estimate_methods, Method, MethodSettings};
use maic::rng::stream;
use maic::sim::dgm::{generate_competitor_ald, generate_index_trial, sample_covariates};
use maic::sim::ScenarioConfig;

#[test]
fn covariate_moments() {
    let cfg = ScenarioConfig::default();
    let n = 1_000_000;
    let x = sample_covariates(&cfg, &[0.5, 0.4, 0.3], n, &mut stream([11, 0, 0, 0]));
    let nf = n as f64;
    let means: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / nf).collect();
    for (m, target) in means.iter().zip([0.5, 0.4, 0.3]) {
        // sd of the mean is 0.4 / 1000
        assert!((m - target).abs() < 0.002, "mean {m} vs {target}");
    }
    for a in 0..3 {
        for b in a..3 {
            let cov = x
                .column(a)
                .iter()
                .zip(x.column(b))
                .map(|(u, v)| (u - means[a]) * (v - means[b]))
                .sum::<f64>()
                / (nf - 1.0);
            let expected = if a == b { 0.16 } else { 0.032 };
            assert!((cov - expected).abs() < 0.001, "cov[{a},{b}] = {cov}");
        }
    }
}

#[test]
fn competitor_effect_is_unbiased() {
    let cfg = ScenarioConfig::default();
    let draws = 10_000;
    let total: f64 = (0..draws)
        .map(|r| generate_competitor_ald(&cfg, &mut stream([12, r, 0, 0])).effect_estimate())
        .sum();
    let mean = total / draws as f64;
    // sd of one estimate is about 0.125, so the mean has sd about 0.00125
    assert!((mean - cfg.true_delta_10()).abs() < 0.005, "{mean}");
    assert!((cfg.true_delta_10() - -0.2).abs() < 1e-12);
}

#[test]
fn large_index_trial_recovers_target_effect() {
    let cfg = ScenarioConfig {
        n_index: 100_000,
        ..ScenarioConfig::default()
    };
    let ipd = generate_index_trial(&cfg, &mut stream([13, 0, 0, 0]));
    let big = ScenarioConfig {
        n_competitor: 100_000,
        ..ScenarioConfig::default()
    };
    let ald = generate_competitor_ald(&big, &mut stream([14, 0, 0, 0]));
    let targets = effect_modifier_targets(&ipd, &ald).unwrap();
    let est = estimate_methods(&ipd, &targets, &Method::ALL, &MethodSettings::default());
    for (m, e) in Method::ALL.iter().zip(est) {
        let e = e.unwrap();
        if m.is_truncated() {
            // truncation trades balance for variance; the estimate stays close
            assert!((e - -0.2).abs() < 0.15, "{m}: {e}");
        } else {
            assert!((e - -0.2).abs() < 0.08, "{m}: {e}");
        }
    }
}
