//! Trial-assignment odds weights fitted by the method of moments.
//!
//! With effect modifiers centred on the competitor means, `z*_i = z_i - theta`,
//! the coefficients minimise the convex objective `Q(a) = sum_i exp(z*_i . a)`
//! and the weights are `w_i = exp(z*_i . a)`. At the minimum the gradient
//! `sum_i w_i z*_i` vanishes, which is exactly the statement that the weighted
//! effect-modifier means equal the published ones. The intercept of the odds
//! model only rescales the weights and is not estimated.

use std::fmt;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{center_covariates, AggregateSummary, DataError, IndexPatientData};
use crate::optim::{self, BfgsOptions, BfgsStatus};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("infeasible balance: {0}")]
    InfeasibleBalance(String),
    #[error("trial-assignment fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    TrialOdds,
    Combined,
    TruncatedTrialOdds,
    TruncatedCombined,
}

impl WeightKind {
    pub fn truncated(self) -> Self {
        match self {
            WeightKind::TrialOdds | WeightKind::TruncatedTrialOdds => WeightKind::TruncatedTrialOdds,
            WeightKind::Combined | WeightKind::TruncatedCombined => WeightKind::TruncatedCombined,
        }
    }
}

/// Strictly positive, finite, relative subject weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    kind: WeightKind,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, kind: WeightKind) -> Result<Self, WeightError> {
        if values.is_empty() {
            return Err(WeightError::InvalidWeights("no weights".into()));
        }
        if let Some(i) = values.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(WeightError::InvalidWeights(format!(
                "weight {i} is {}, must be finite and positive",
                values[i]
            )));
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ess(&self) -> f64 {
        kish_ess(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Solver settings for the trial-assignment fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    /// Stop when every gradient component of Q is at most this.
    pub grad_tol: f64,
    /// ...and every weighted effect-modifier mean is within this of its target.
    pub balance_tol: f64,
    pub max_iter: usize,
    /// Coefficients beyond this magnitude are treated as a separated problem.
    pub divergence_bound: f64,
    /// Start point; zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            balance_tol: 1e-8,
            max_iter: 500,
            divergence_bound: 1e4,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialWeightFit {
    pub alpha1: Vec<f64>,
    pub weights: WeightVector,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub ess: f64,
}

/// `Q(a) = sum_i exp(z*_i . a)`.
pub fn objective_q(alpha1: &[f64], z_star: ArrayView2<f64>) -> f64 {
    assert_eq!(alpha1.len(), z_star.ncols());
    z_star
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(alpha1).map(|(z, a)| z * a).sum::<f64>().exp())
        .sum()
}

/// `grad Q(a) = sum_i exp(z*_i . a) z*_i`.
pub fn gradient_q(alpha1: &[f64], z_star: ArrayView2<f64>) -> Array1<f64> {
    let mut g = Array1::zeros(alpha1.len());
    value_and_gradient(alpha1, z_star, g.as_slice_mut().unwrap());
    g
}

fn value_and_gradient(alpha1: &[f64], z_star: ArrayView2<f64>, grad: &mut [f64]) -> f64 {
    assert_eq!(alpha1.len(), z_star.ncols());
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut q = 0.0;
    for row in z_star.rows() {
        let e = row.iter().zip(alpha1).map(|(z, a)| z * a).sum::<f64>().exp();
        q += e;
        for (g, z) in grad.iter_mut().zip(row) {
            *g += e * z;
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AllAboveTarget,
    AllBelowTarget,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AllAboveTarget => "all values above target",
            Direction::AllBelowTarget => "all values below target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnFeasibility {
    pub column: usize,
    pub feasible: bool,
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub columns: Vec<ColumnFeasibility>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.columns.iter().all(|c| c.feasible)
    }

    pub fn describe(&self, names: &[&str]) -> String {
        self.columns
            .iter()
            .filter_map(|c| {
                c.direction.map(|d| {
                    let name = names.get(c.column).copied().unwrap_or("?");
                    format!("effect modifier `{name}`: {d}")
                })
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// A column is infeasible when every centred value has the same strict sign:
/// no positive weighting can then move its mean onto the target.
pub fn check_feasibility(z_star: ArrayView2<f64>) -> FeasibilityReport {
    let columns = z_star
        .columns()
        .into_iter()
        .enumerate()
        .map(|(column, col)| {
            let direction = if col.iter().all(|&v| v > 0.0) {
                Some(Direction::AllAboveTarget)
            } else if col.iter().all(|&v| v < 0.0) {
                Some(Direction::AllBelowTarget)
            } else {
                None
            };
            ColumnFeasibility {
                column,
                feasible: direction.is_none(),
                direction,
            }
        })
        .collect();
    FeasibilityReport { columns }
}

/// Fits the trial-assignment weights of the IPD against the competitor means.
pub fn fit_trial_weights(
    ipd: &IndexPatientData,
    summary: &AggregateSummary,
    opts: &OptimizerSettings,
) -> Result<TrialWeightFit, WeightError> {
    let z_star = center_covariates(ipd, summary)?;
    let report = check_feasibility(z_star.view());
    if !report.is_feasible() {
        return Err(WeightError::InfeasibleBalance(
            report.describe(&ipd.effect_modifier_names()),
        ));
    }
    fit_centered(z_star.view(), opts)
}

/// Fits weights on already-centred effect modifiers. Feasibility is checked here too.
pub fn fit_centered(
    z_star: ArrayView2<f64>,
    opts: &OptimizerSettings,
) -> Result<TrialWeightFit, WeightError> {
    let p = z_star.ncols();
    let report = check_feasibility(z_star);
    if !report.is_feasible() {
        let names: Vec<String> = (1..=p).map(|j| format!("z{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        return Err(WeightError::InfeasibleBalance(report.describe(&names)));
    }
    let start = match &opts.start {
        Some(s) if s.len() == p => s.clone(),
        Some(s) => {
            return Err(WeightError::InvalidWeights(format!(
                "start point has {} components, expected {p}",
                s.len()
            )))
        }
        None => vec![0.0; p],
    };
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        divergence_bound: opts.divergence_bound,
    };
    let stop = |q: f64, g: &[f64]| {
        let norm = optim::inf_norm(g);
        norm <= opts.grad_tol && norm <= opts.balance_tol * q
    };
    let out = optim::minimize(
        |a, g| value_and_gradient(a, z_star, g),
        start,
        &bfgs,
        stop,
    );
    let gradient_norm = optim::inf_norm(&out.grad);
    match out.status {
        BfgsStatus::Converged => {}
        BfgsStatus::Diverged => {
            return Err(WeightError::InfeasibleBalance(format!(
                "coefficients exceeded {:e} in magnitude (near separation)",
                opts.divergence_bound
            )))
        }
        BfgsStatus::MaxIterations | BfgsStatus::LineSearchFailed => {
            // Q falling towards zero is the signature of separation.
            if out.f < 1e-8 * z_star.nrows() as f64 {
                return Err(WeightError::InfeasibleBalance(
                    "objective decreasing towards zero (near separation)".into(),
                ));
            }
            return Err(WeightError::NonConvergence {
                iterations: out.iterations,
                gradient_norm,
            });
        }
    }
    let weights = odds_weights(z_star, &out.x);
    let weights = WeightVector::new(weights, WeightKind::TrialOdds)?;
    let ess = weights.ess();
    Ok(TrialWeightFit {
        alpha1: out.x,
        weights,
        converged: true,
        iterations: out.iterations,
        final_gradient_norm: gradient_norm,
        ess,
    })
}

/// `exp(z*_i . a)`. When any linear predictor is large enough to overflow or
/// underflow, the predictors are shifted by their maximum first (weights are
/// only defined up to scale) and underflowing weights are floored at the
/// smallest normal double to stay strictly positive.
pub fn odds_weights(z_star: ArrayView2<f64>, alpha1: &[f64]) -> Vec<f64> {
    let lin: Vec<f64> = z_star
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(alpha1).map(|(z, a)| z * a).sum())
        .collect();
    let m = lin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = lin.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if m > 700.0 || lo < -700.0 { m } else { 0.0 };
    lin.iter()
        .map(|l| (l - shift).exp().max(f64::MIN_POSITIVE))
        .collect()
}

/// Weighted mean of every column of `z`.
pub fn weighted_column_means(z: ArrayView2<f64>, weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    z.columns()
        .into_iter()
        .map(|col| col.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total)
        .collect()
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn kish_ess(weights: &[f64]) -> f64 {
    let (s, s2) = weights.iter().fold((0.0, 0.0), |(s, s2), w| (s + w, s2 + w * w));
    s * s / s2
}

pub fn ess(weights: &WeightVector) -> f64 {
    weights.ess()
}

/// Percentile of `values` by linear interpolation between order statistics:
/// position `h = (n-1) p/100 + 1` (1-based), value `x(floor h) + frac(h) (x(floor h + 1) - x(floor h))`.
pub fn interpolated_percentile(values: &[f64], percentile: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let h = (n - 1) as f64 * percentile / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Caps every weight above the given percentile at the percentile value.
pub fn truncate_weights(weights: &WeightVector, percentile: f64) -> WeightVector {
    assert!(
        percentile > 0.0 && percentile <= 100.0,
        "percentile must lie in (0, 100], got {percentile}"
    );
    let cutoff = interpolated_percentile(weights.values(), percentile);
    let values = weights.values().iter().map(|&w| w.min(cutoff)).collect();
    WeightVector {
        values,
        kind: weights.kind().truncated(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn objective_at_zero_is_n() {
        let z = array![[0.3, -1.0], [0.1, 2.0], [-0.5, 0.0]];
        assert_eq!(objective_q(&[0.0, 0.0], z.view()), 3.0);
        let g = gradient_q(&[0.0, 0.0], z.view());
        assert!((g[0] - (-0.1)).abs() < 1e-15);
        assert!((g[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_objective() {
        let z = array![[-0.75], [0.25]];
        let a = 3f64.ln();
        let q = objective_q(&[a], z.view());
        assert!((q - (3f64.powf(-0.75) + 3f64.powf(0.25))).abs() < 1e-14);
        assert!((q - 1.7548).abs() < 1e-4);
        assert!(gradient_q(&[a], z.view())[0].abs() < 1e-12);
        assert!(objective_q(&[2.0 * a], z.view()) > q);
    }

    #[test]
    fn two_point_fit() {
        let z = array![[-0.75], [0.25]];
        let fit = fit_centered(z.view(), &OptimizerSettings::default()).unwrap();
        assert!((fit.alpha1[0] - 3f64.ln()).abs() < 1e-8);
        let w = fit.weights.values();
        assert!((w[0] - 3f64.powf(-0.75)).abs() < 1e-8);
        assert!((w[1] - 3f64.powf(0.25)).abs() < 1e-8);
        let m = weighted_column_means(array![[0.0], [1.0]].view(), w);
        assert!((m[0] - 0.75).abs() < 1e-10);
    }

    #[test]
    fn balanced_input_gives_unit_weights() {
        let z = array![[-0.5, 1.0], [0.5, -1.0], [0.0, 0.0]];
        let fit = fit_centered(z.view(), &OptimizerSettings::default()).unwrap();
        assert_eq!(fit.iterations, 0);
        assert!(fit.alpha1.iter().all(|&a| a == 0.0));
        assert!(fit.weights.values().iter().all(|&w| w == 1.0));
        assert_eq!(fit.ess, 3.0);
    }

    #[test]
    fn feasibility_report() {
        let ok = check_feasibility(array![[-0.75], [0.25]].view());
        assert!(ok.is_feasible());
        let bad = check_feasibility(array![[-0.3], [-0.1], [-0.5]].view());
        assert!(!bad.is_feasible());
        assert_eq!(bad.columns[0].direction, Some(Direction::AllBelowTarget));
        assert!(bad.describe(&["x1"]).contains("all values below target"));
        let boundary = check_feasibility(array![[0.0], [0.2], [0.4]].view());
        assert!(boundary.is_feasible());
        let above = check_feasibility(array![[0.1, -1.0], [0.2, 1.0]].view());
        assert_eq!(above.columns[0].direction, Some(Direction::AllAboveTarget));
        assert!(above.columns[1].feasible);
    }

    #[test]
    fn separated_column_is_infeasible() {
        let z = array![[-0.3, 0.1], [-0.1, -0.2], [-0.5, 0.4]];
        let err = fit_centered(z.view(), &OptimizerSettings::default()).unwrap_err();
        assert!(matches!(err, WeightError::InfeasibleBalance(_)));
    }

    #[test]
    fn kish() {
        assert_eq!(kish_ess(&[1.0, 1.0, 1.0, 1.0]), 4.0);
        assert!((kish_ess(&[2.0, 1.0]) - 1.8).abs() < 1e-15);
        assert!((kish_ess(&[0.37; 9]) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_examples() {
        let w = WeightVector::new((1..=20).map(f64::from).collect(), WeightKind::TrialOdds).unwrap();
        assert!((interpolated_percentile(w.values(), 95.0) - 19.05).abs() < 1e-12);
        let t = truncate_weights(&w, 95.0);
        assert_eq!(t.kind(), WeightKind::TruncatedTrialOdds);
        assert!((t.values()[19] - 19.05).abs() < 1e-12);
        assert_eq!(&t.values()[..19], &w.values()[..19]);

        let full = truncate_weights(&w, 100.0);
        assert_eq!(full.values(), w.values());

        let uniform = WeightVector::new(vec![2.5; 7], WeightKind::Combined).unwrap();
        let tu = truncate_weights(&uniform, 95.0);
        assert_eq!(tu.values(), uniform.values());
        assert_eq!(tu.kind(), WeightKind::TruncatedCombined);
    }

    #[test]
    fn rejects_nonpositive_weights() {
        assert!(WeightVector::new(vec![1.0, 0.0], WeightKind::TrialOdds).is_err());
        assert!(WeightVector::new(vec![1.0, f64::NAN], WeightKind::TrialOdds).is_err());
    }
}
