//! Ordinary nonparametric bootstrap of the A vs C marginal effect.
//!
//! Only the IPD is resampled; the published competitor summary is held fixed.
//! Each resample re-runs the whole weighting pipeline. Resample `b` draws its
//! indices from a stream keyed by `(seed, b)` and writes into slot `b`, so the
//! result does not depend on how many threads run the resamples.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{effect_modifier_targets, AggregateSummary, DataError, IndexPatientData};
use crate::method::{estimate_methods, Failure, Method, MethodSettings};
use crate::rng;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("{failed} of {requested} bootstrap resamples failed (limit {limit:.1}%)", limit = 100.0 * .max_rate)]
    TooManyFailures {
        failed: usize,
        requested: usize,
        max_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub seed: u64,
    /// Largest tolerated fraction of failed resamples.
    pub max_failure_rate: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            resamples: 2000,
            seed: 1,
            max_failure_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Mean of the replicate estimates.
    pub point: f64,
    /// Standard deviation of the replicate estimates (denominator `len - 1`).
    pub se: f64,
    pub replicates: Vec<f64>,
    pub n_failed: usize,
    pub requested: usize,
    pub failures: BTreeMap<String, usize>,
}

/// Subject indices of resample `b`: `n` uniform draws with replacement.
pub fn resample_indices(n: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut stream = rng::resample_stream(seed, b);
    (0..n).map(|_| stream.random_range(0..n)).collect()
}

/// Bootstraps one method.
pub fn bootstrap_effect(
    ipd: &IndexPatientData,
    summary: &AggregateSummary,
    method: Method,
    boot: &BootstrapSettings,
    settings: &MethodSettings,
) -> Result<BootstrapResult, BootstrapError> {
    let targets = effect_modifier_targets(ipd, summary)?;
    bootstrap_methods(ipd, &targets, &[method], boot, settings)?
        .pop()
        .expect("one method requested")
}

/// Bootstraps several methods over one shared set of resamples.
pub fn bootstrap_methods(
    ipd: &IndexPatientData,
    targets: &[f64],
    methods: &[Method],
    boot: &BootstrapSettings,
    settings: &MethodSettings,
) -> Result<Vec<Result<BootstrapResult, BootstrapError>>, BootstrapError> {
    if boot.resamples < 2 {
        return Err(BootstrapError::TooFewResamples(boot.resamples));
    }
    let n = ipd.n();
    let outcomes: Vec<Vec<Result<f64, Failure>>> = (0..boot.resamples)
        .into_par_iter()
        .map(|b| {
            let rows = resample_indices(n, boot.seed, b as u64);
            analyse_rows(ipd, targets, methods, settings, &rows)
        })
        .collect();
    Ok(summarise(methods.len(), &outcomes, boot.max_failure_rate))
}

/// Bootstraps over caller-supplied resamples (each a list of row indices).
pub fn bootstrap_with_resamples(
    ipd: &IndexPatientData,
    targets: &[f64],
    methods: &[Method],
    resamples: &[Vec<usize>],
    max_failure_rate: f64,
    settings: &MethodSettings,
) -> Result<Vec<Result<BootstrapResult, BootstrapError>>, BootstrapError> {
    if resamples.len() < 2 {
        return Err(BootstrapError::TooFewResamples(resamples.len()));
    }
    let outcomes: Vec<Vec<Result<f64, Failure>>> = resamples
        .par_iter()
        .map(|rows| analyse_rows(ipd, targets, methods, settings, rows))
        .collect();
    Ok(summarise(methods.len(), &outcomes, max_failure_rate))
}

fn analyse_rows(
    ipd: &IndexPatientData,
    targets: &[f64],
    methods: &[Method],
    settings: &MethodSettings,
    rows: &[usize],
) -> Vec<Result<f64, Failure>> {
    match ipd.select_rows(rows) {
        Ok(sample) => estimate_methods(&sample, targets, methods, settings),
        Err(_) => vec![Err(Failure::EmptyArm); methods.len()],
    }
}

fn summarise(
    n_methods: usize,
    outcomes: &[Vec<Result<f64, Failure>>],
    max_failure_rate: f64,
) -> Vec<Result<BootstrapResult, BootstrapError>> {
    let requested = outcomes.len();
    (0..n_methods)
        .map(|m| {
            let mut replicates = Vec::with_capacity(requested);
            let mut failures = BTreeMap::new();
            for row in outcomes {
                match row[m] {
                    Ok(v) => replicates.push(v),
                    Err(f) => *failures.entry(f.to_string()).or_insert(0) += 1,
                }
            }
            let n_failed = requested - replicates.len();
            if n_failed as f64 > max_failure_rate * requested as f64 || replicates.len() < 2 {
                return Err(BootstrapError::TooManyFailures {
                    failed: n_failed,
                    requested,
                    max_rate: max_failure_rate,
                });
            }
            let (point, se) = mean_sd(&replicates);
            Ok(BootstrapResult {
                point,
                se,
                replicates,
                n_failed,
                requested,
                failures,
            })
        })
        .collect()
}

/// Mean and sample standard deviation; exactly `(x, 0)` when all values equal `x`.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return (first, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn small_ipd(outcome: ndarray::Array1<f64>) -> IndexPatientData {
        let x = Array2::from_shape_fn((12, 1), |(i, _)| (i as f64 * 0.37).sin() * 0.5 + 0.5);
        let t = (0..12).map(|i| i % 2 == 0).collect();
        IndexPatientData::with_default_names(x, t, outcome).unwrap()
    }

    #[test]
    fn resample_indices_are_deterministic_and_in_range() {
        let a = resample_indices(50, 9, 3);
        assert_eq!(a, resample_indices(50, 9, 3));
        assert_ne!(a, resample_indices(50, 9, 4));
        assert!(a.iter().all(|&i| i < 50));
    }

    #[test]
    fn constant_outcome_gives_zero() {
        let ipd = small_ipd(ndarray::Array1::from_elem(12, 3.0));
        let boot = BootstrapSettings {
            resamples: 40,
            seed: 5,
            max_failure_rate: 0.5,
        };
        let targets = [0.5];
        let results = bootstrap_methods(&ipd, &targets, &Method::ALL, &boot, &MethodSettings::default()).unwrap();
        for r in results {
            let r = r.unwrap();
            assert!(r.point.abs() < 1e-12);
            assert!(r.se < 1e-12);
            assert_eq!(r.replicates.len() + r.n_failed, 40);
        }
    }

    #[test]
    fn too_few_resamples() {
        let ipd = small_ipd(ndarray::Array1::zeros(12));
        let boot = BootstrapSettings {
            resamples: 1,
            ..Default::default()
        };
        assert!(matches!(
            bootstrap_methods(&ipd, &[0.5], &[Method::Maic], &boot, &MethodSettings::default()),
            Err(BootstrapError::TooManyFailures { .. }) | Err(BootstrapError::TooFewResamples(1))
        ));
    }

    #[test]
    fn empty_arm_resample_counts_as_failure() {
        let ipd = small_ipd(array![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let all_treated = vec![0, 2, 4, 6, 8, 10, 0, 2, 4, 6, 8, 10];
        let identity: Vec<usize> = (0..12).collect();
        let res = bootstrap_with_resamples(
            &ipd,
            &[0.5],
            &[Method::Maic],
            &[identity.clone(), identity, all_treated],
            0.5,
            &MethodSettings::default(),
        )
        .unwrap();
        let r = res[0].as_ref().unwrap();
        assert_eq!(r.n_failed, 1);
        assert_eq!(r.failures.get("empty treatment arm"), Some(&1));
    }

    #[test]
    fn mean_sd_basics() {
        assert_eq!(mean_sd(&[0.1; 7]), (0.1, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
