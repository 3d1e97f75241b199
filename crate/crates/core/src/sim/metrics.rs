//! Performance measures over simulation replicates, with Monte Carlo standard errors.

use serde::Serialize;

use super::SimError;
use crate::method::Method;

/// One usable replicate estimate of the A vs B effect.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub scenario: String,
    pub method: Method,
    pub replicate: usize,
    pub delta_12: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl EstimateRow {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub scenario: String,
    pub method: Method,
    pub bias: f64,
    pub bias_mcse: f64,
    pub ese: f64,
    pub ese_mcse: f64,
    pub mse: f64,
    pub mse_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub n_used: usize,
    pub n_discarded: usize,
}

/// Bias, empirical SE, MSE and coverage of the estimates against `true_delta`.
///
/// * bias = mean(d) - true, MCSE = ese / sqrt(N)
/// * ese = SD(d) with denominator N - 1, MCSE = ese / sqrt(2 (N - 1))
/// * mse = mean((d - true)^2), MCSE = sqrt(sum((d_i - true)^2 - mse)^2 / (N (N - 1)))
/// * coverage = share of intervals containing true, MCSE = sqrt(cov (1 - cov) / N)
pub fn compute_metrics(
    scenario: &str,
    method: Method,
    rows: &[EstimateRow],
    true_delta: f64,
    n_discarded: usize,
) -> Result<MethodMetrics, SimError> {
    let n = rows.len();
    if n < 2 {
        return Err(SimError::TooFewRecords(n));
    }
    let nf = n as f64;
    let mean = rows.iter().map(|r| r.delta_12).sum::<f64>() / nf;
    let bias = mean - true_delta;
    let ese = (rows.iter().map(|r| (r.delta_12 - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let sq: Vec<f64> = rows.iter().map(|r| (r.delta_12 - true_delta).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / nf;
    let mse_mcse = (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (nf * (nf - 1.0))).sqrt();
    let coverage = rows.iter().filter(|r| r.covers(true_delta)).count() as f64 / nf;
    Ok(MethodMetrics {
        scenario: scenario.to_string(),
        method,
        bias,
        bias_mcse: ese / nf.sqrt(),
        ese,
        ese_mcse: ese / (2.0 * (nf - 1.0)).sqrt(),
        mse,
        mse_mcse,
        coverage,
        coverage_mcse: (coverage * (1.0 - coverage) / nf).sqrt(),
        n_used: n,
        n_discarded,
    })
}

/// Row with undefined measures, for a scenario/method left with fewer than two estimates.
pub fn empty_metrics(scenario: &str, method: Method, n_used: usize, n_discarded: usize) -> MethodMetrics {
    MethodMetrics {
        scenario: scenario.to_string(),
        method,
        bias: f64::NAN,
        bias_mcse: f64::NAN,
        ese: f64::NAN,
        ese_mcse: f64::NAN,
        mse: f64::NAN,
        mse_mcse: f64::NAN,
        coverage: f64::NAN,
        coverage_mcse: f64::NAN,
        n_used,
        n_discarded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: f64, half: f64) -> EstimateRow {
        EstimateRow {
            scenario: "s".into(),
            method: Method::Maic,
            replicate: 0,
            delta_12: d,
            ci_lower: d - half,
            ci_upper: d + half,
        }
    }

    #[test]
    fn degenerate_records() {
        let rows = vec![row(0.0, 0.1); 10];
        let m = compute_metrics("s", Method::Maic, &rows, 0.0, 0).unwrap();
        assert_eq!((m.bias, m.ese, m.mse, m.coverage), (0.0, 0.0, 0.0, 1.0));
        assert_eq!(m.coverage_mcse, 0.0);
    }

    #[test]
    fn mse_decomposition() {
        let rows: Vec<_> = [0.3, -0.1, 0.25, 0.7, -0.4, 0.05].iter().map(|&d| row(d, 0.2)).collect();
        let m = compute_metrics("s", Method::Maic, &rows, 0.1, 0).unwrap();
        let n = rows.len() as f64;
        assert!((m.mse - (m.bias.powi(2) + m.ese.powi(2) * (n - 1.0) / n)).abs() < 1e-12);
    }

    #[test]
    fn mcse_examples() {
        // coverage 0.95 over 5000 replicates
        let rows: Vec<_> = (0..5000).map(|i| row(if i < 4750 { 0.0 } else { 1.0 }, 0.5)).collect();
        let m = compute_metrics("s", Method::Maic, &rows, 0.0, 0).unwrap();
        assert!((m.coverage - 0.95).abs() < 1e-12);
        assert!((m.coverage_mcse - 0.00308).abs() < 1e-5);

        let n = 5000.0f64;
        assert!((0.53 / n.sqrt() - 0.0075).abs() < 1e-4);
    }

    #[test]
    fn needs_two_records() {
        assert!(compute_metrics("s", Method::Maic, &[row(0.0, 1.0)], 0.0, 0).is_err());
    }
}
