//! Data-generating mechanism shared by both simulated trials:
//! `y = beta0 + x beta1 + (beta_t + x beta2) 1(t = 1) + e`, with `x` multivariate
//! normal and `e ~ N(0, error_sd^2)`.
//!
//! Normal deviates come from `rand_distr::StandardNormal` (ziggurat). Draw
//! order within a trial: covariates row by row, then the allocation, then the
//! outcome errors.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{Allocation, ScenarioConfig};
use crate::data::{default_names, AggregateSummary, IndexPatientData};
use crate::linalg;

pub struct SimulatedTrial {
    pub covariates: Array2<f64>,
    pub treatment: Vec<bool>,
    pub outcome: Array1<f64>,
}

/// Draws `n` rows from `MVN(means, cfg.covariance())` through the Cholesky factor.
pub fn sample_covariates<R: Rng + ?Sized>(cfg: &ScenarioConfig, means: &[f64], n: usize, rng: &mut R) -> Array2<f64> {
    let k = cfg.k;
    let chol = linalg::cholesky(&cfg.covariance(), k).expect("validated covariance");
    let mut x = Array2::zeros((n, k));
    let mut z = vec![0.0; k];
    for mut row in x.rows_mut() {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for j in 0..k {
            let lz: f64 = (0..=j).map(|l| chol[j * k + l] * z[l]).sum();
            row[j] = means[j] + lz;
        }
    }
    x
}

pub fn allocate<R: Rng + ?Sized>(allocation: Allocation, n: usize, rng: &mut R) -> Vec<bool> {
    match allocation {
        Allocation::Fixed => {
            let mut t: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
            t.shuffle(rng);
            t
        }
        Allocation::Bernoulli => loop {
            let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            if t.iter().any(|&v| v) && !t.iter().all(|&v| v) {
                break t;
            }
        },
    }
}

pub fn simulate_trial<R: Rng + ?Sized>(cfg: &ScenarioConfig, means: &[f64], n: usize, rng: &mut R) -> SimulatedTrial {
    let covariates = sample_covariates(cfg, means, n, rng);
    let treatment = allocate(cfg.allocation, n, rng);
    let outcome = covariates
        .rows()
        .into_iter()
        .zip(&treatment)
        .map(|(x, &t)| {
            let prognostic: f64 = x.iter().zip(&cfg.beta1).map(|(a, b)| a * b).sum();
            let modifier: f64 = x.iter().zip(&cfg.beta2).map(|(a, b)| a * b).sum();
            let eps: f64 = rng.sample(StandardNormal);
            let effect = if t { cfg.beta_t + modifier } else { 0.0 };
            cfg.beta0 + prognostic + effect + cfg.error_sd * eps
        })
        .collect();
    SimulatedTrial {
        covariates,
        treatment,
        outcome,
    }
}

/// Simulated index (A vs C) trial; every covariate is an effect modifier.
pub fn generate_index_trial<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> IndexPatientData {
    let trial = simulate_trial(cfg, &cfg.index_cov_means, cfg.n_index, rng);
    IndexPatientData::with_default_names(trial.covariates, trial.treatment, trial.outcome)
        .expect("simulated trial is valid")
}

/// Simulated competitor (B vs C) trial reduced to its published summary:
/// covariate means plus the unadjusted OLS treatment effect and its nominal variance.
pub fn generate_competitor_ald<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> AggregateSummary {
    let trial = simulate_trial(cfg, &cfg.competitor_cov_means, cfg.n_competitor, rng);
    let means: Vec<f64> = trial
        .covariates
        .mean_axis(ndarray::Axis(0))
        .expect("non-empty")
        .to_vec();
    let (estimate, variance) = ols_treatment_effect(trial.outcome.as_slice().expect("contiguous"), &trial.treatment);
    AggregateSummary::new(default_names(cfg.k), means, estimate, variance, Some(cfg.n_competitor as u64))
        .expect("simulated summary is valid")
}

/// OLS of `y` on `(1, t)`: treatment coefficient and its classical
/// homoskedastic variance `s^2 / sum (t - t_bar)^2` with `s^2 = RSS / (n - 2)`.
pub fn ols_treatment_effect(y: &[f64], t: &[bool]) -> (f64, f64) {
    let n = y.len() as f64;
    let t_bar = t.iter().filter(|&&v| v).count() as f64 / n;
    let y_bar = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&yi, &ti) in y.iter().zip(t) {
        let dt = f64::from(u8::from(ti)) - t_bar;
        sxy += dt * (yi - y_bar);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * t_bar;
    let rss: f64 = y
        .iter()
        .zip(t)
        .map(|(&yi, &ti)| {
            let fitted = intercept + slope * f64::from(u8::from(ti));
            (yi - fitted).powi(2)
        })
        .sum();
    let s2 = rss / (n - 2.0);
    (slope, s2 / sxx)
}
