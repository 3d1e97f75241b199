use rand::Rng;
use serde::Serialize;

use super::config::ScenarioConfig;
use super::dgm::{generate_competitor_ald, generate_index_trial};
use crate::bootstrap::{bootstrap_methods, BootstrapError, BootstrapSettings};
use crate::data::{effect_modifier_targets, AggregateSummary, IndexPatientData};
use crate::estimation::{anchored_comparison, EffectEstimate, EffectScale};
use crate::method::{estimate_methods, Failure, Method};
use crate::rng::{purpose, replicate_stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub delta_10: f64,
    pub var_10: f64,
    pub delta_12: f64,
    pub var_12: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Discard {
    /// The full simulated dataset could not be analysed.
    Fit(Failure),
    /// Too many bootstrap resamples failed.
    Bootstrap { failed: usize, requested: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub records: Vec<(Method, Result<ReplicateRecord, Discard>)>,
}

/// Both simulated datasets of one replicate.
pub fn replicate_data(
    cfg: &ScenarioConfig,
    scenario_id: u64,
    replicate: usize,
) -> (IndexPatientData, AggregateSummary) {
    let r = replicate as u64;
    let ipd = generate_index_trial(cfg, &mut replicate_stream(cfg.base_seed, scenario_id, r, purpose::INDEX_TRIAL));
    let ald = generate_competitor_ald(
        cfg,
        &mut replicate_stream(cfg.base_seed, scenario_id, r, purpose::COMPETITOR_TRIAL),
    );
    (ipd, ald)
}

/// Simulates one dataset pair and analyses it with every method, sharing the
/// bootstrap resamples across methods. The A vs C estimate is the bootstrap
/// mean and its variance the bootstrap variance.
pub fn run_replicate(cfg: &ScenarioConfig, scenario_id: u64, replicate: usize) -> ReplicateOutcome {
    let (ipd, ald) = replicate_data(cfg, scenario_id, replicate);
    let boot_seed: u64 = replicate_stream(cfg.base_seed, scenario_id, replicate as u64, purpose::BOOTSTRAP).random();
    analyse_replicate(cfg, &ipd, &ald, boot_seed, replicate)
}

pub fn analyse_replicate(
    cfg: &ScenarioConfig,
    ipd: &IndexPatientData,
    ald: &AggregateSummary,
    boot_seed: u64,
    replicate: usize,
) -> ReplicateOutcome {
    let methods = Method::ALL;
    let settings = cfg.method_settings();
    let targets = effect_modifier_targets(ipd, ald).expect("simulated names match");

    // A dataset whose own weights cannot be estimated is discarded outright.
    let full = estimate_methods(ipd, &targets, &methods, &settings);
    let boot = BootstrapSettings {
        resamples: cfg.bootstrap_b,
        seed: boot_seed,
        max_failure_rate: cfg.max_failure_rate,
    };
    let needs_boot = full.iter().any(Result::is_ok);
    let boot_results = if needs_boot {
        bootstrap_methods(ipd, &targets, &methods, &boot, &settings).expect("validated bootstrap size")
    } else {
        Vec::new()
    };

    let records = methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            if let Err(f) = full[m] {
                return (method, Err(Discard::Fit(f)));
            }
            let record = match &boot_results[m] {
                Ok(b) => {
                    let d10 = EffectEstimate::wald(b.point, b.se * b.se, EffectScale::MeanDifference, cfg.level);
                    let d12 = anchored_comparison(&d10, ald.effect_estimate(), ald.effect_variance(), cfg.level);
                    Ok(ReplicateRecord {
                        delta_10: d10.point,
                        var_10: d10.variance,
                        delta_12: d12.point,
                        var_12: d12.variance,
                        ci_lower: d12.ci_lower,
                        ci_upper: d12.ci_upper,
                        covered: d12.covers(cfg.true_delta_12),
                    })
                }
                Err(BootstrapError::TooManyFailures { failed, requested, .. }) => Err(Discard::Bootstrap {
                    failed: *failed,
                    requested: *requested,
                }),
                Err(e) => unreachable!("bootstrap error after validation: {e}"),
            };
            (method, record)
        })
        .collect();
    ReplicateOutcome { replicate, records }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            n_replicates: 2,
            bootstrap_b: 20,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn replicate_is_reproducible() {
        let cfg = small_cfg();
        assert_eq!(run_replicate(&cfg, 0, 3), run_replicate(&cfg, 0, 3));
        assert_ne!(run_replicate(&cfg, 0, 3), run_replicate(&cfg, 0, 4));
    }

    #[test]
    fn separated_dataset_is_discarded() {
        let cfg = small_cfg();
        let (ipd, ald) = replicate_data(&cfg, 0, 0);
        // push one covariate below the competitor mean for everybody
        let mut x = ipd.covariates().clone();
        let theta = ald.mean_of("x2").unwrap();
        x.column_mut(1).mapv_inplace(|v| v.min(theta - 0.01));
        let shifted = IndexPatientData::with_default_names(x, ipd.treatment().to_vec(), ipd.outcome().clone())
            .unwrap();
        let out = analyse_replicate(&cfg, &shifted, &ald, 1, 0);
        assert!(out
            .records
            .iter()
            .all(|(_, r)| *r == Err(Discard::Fit(Failure::InfeasibleBalance))));
    }
}
