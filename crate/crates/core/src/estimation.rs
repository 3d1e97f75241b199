//! Marginal A vs C effects from weighted IPD and the anchored comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::IndexPatientData;
use crate::weights::WeightVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("empty arm")]
    EmptyArm,
    #[error("{0} weights for {1} subjects")]
    LengthMismatch(usize, usize),
    #[error("mean {0} outside (0, 1) for the logit link")]
    LogitDomain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectScale {
    MeanDifference,
    LogOddsRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub point: f64,
    pub variance: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub scale: EffectScale,
    pub level: f64,
}

impl EffectEstimate {
    /// Normal (Wald) interval `point -/+ z_{(1+level)/2} sqrt(variance)`.
    pub fn wald(point: f64, variance: f64, scale: EffectScale, level: f64) -> Self {
        assert!(variance >= 0.0, "variance must be non-negative");
        assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
        let half = normal_quantile(0.5 * (1.0 + level)) * variance.sqrt();
        Self {
            point,
            variance,
            ci_lower: point - half,
            ci_upper: point + half,
            scale,
            level,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `sum y_i w_i / sum w_i`.
pub fn weighted_marginal_mean(outcomes: &[f64], weights: &[f64]) -> Result<f64, EstimationError> {
    if outcomes.is_empty() {
        return Err(EstimationError::EmptyArm);
    }
    if outcomes.len() != weights.len() {
        return Err(EstimationError::LengthMismatch(weights.len(), outcomes.len()));
    }
    let (num, den) = outcomes
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(num, den), (y, w)| (num + y * w, den + w));
    Ok(num / den)
}

/// Weighted outcome means of the treated and control arms.
pub fn arm_means(ipd: &IndexPatientData, weights: &[f64]) -> Result<(f64, f64), EstimationError> {
    if weights.len() != ipd.n() {
        return Err(EstimationError::LengthMismatch(weights.len(), ipd.n()));
    }
    let mut arms: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    for ((&t, &y), &w) in ipd.treatment().iter().zip(ipd.outcome()).zip(weights) {
        let arm = &mut arms[usize::from(t)];
        arm.0.push(y);
        arm.1.push(w);
    }
    let mu1 = weighted_marginal_mean(&arms[1].0, &arms[1].1)?;
    let mu0 = weighted_marginal_mean(&arms[0].0, &arms[0].1)?;
    Ok((mu1, mu0))
}

/// `g(mu1) - g(mu0)` for the identity or logit link.
pub fn marginal_effect(mu1: f64, mu0: f64, scale: EffectScale) -> Result<f64, EstimationError> {
    match scale {
        EffectScale::MeanDifference => Ok(mu1 - mu0),
        EffectScale::LogOddsRatio => {
            for mu in [mu1, mu0] {
                if !(mu > 0.0 && mu < 1.0) {
                    return Err(EstimationError::LogitDomain(mu));
                }
            }
            let logit = |p: f64| (p / (1.0 - p)).ln();
            Ok(logit(mu1) - logit(mu0))
        }
    }
}

/// Treatment coefficient of the weighted least-squares fit of outcome on `(1, t)`.
pub fn weighted_outcome_regression(
    ipd: &IndexPatientData,
    weights: &WeightVector,
) -> Result<f64, EstimationError> {
    weighted_regression_slope(ipd.outcome().as_slice().expect("contiguous"), ipd.treatment(), weights.values())
}

/// Closed-form WLS slope `sum w (t - t_w)(y - y_w) / sum w (t - t_w)^2`.
pub fn weighted_regression_slope(
    outcome: &[f64],
    treatment: &[bool],
    weights: &[f64],
) -> Result<f64, EstimationError> {
    if weights.len() != outcome.len() || treatment.len() != outcome.len() {
        return Err(EstimationError::LengthMismatch(weights.len(), outcome.len()));
    }
    let (mut sw, mut swt, mut swy) = (0.0, 0.0, 0.0);
    for ((&y, &t), &w) in outcome.iter().zip(treatment).zip(weights) {
        sw += w;
        swy += w * y;
        if t {
            swt += w;
        }
    }
    if swt == 0.0 || swt == sw {
        return Err(EstimationError::EmptyArm);
    }
    let t_bar = swt / sw;
    let y_bar = swy / sw;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((&y, &t), &w) in outcome.iter().zip(treatment).zip(weights) {
        let dt = f64::from(u8::from(t)) - t_bar;
        sxy += w * dt * (y - y_bar);
        sxx += w * dt * dt;
    }
    Ok(sxy / sxx)
}

/// Anchored A vs B comparison: difference of the A vs C and B vs C effects,
/// with variances added.
pub fn anchored_comparison(
    delta_10: &EffectEstimate,
    delta_20_est: f64,
    delta_20_var: f64,
    level: f64,
) -> EffectEstimate {
    assert!(delta_20_var >= 0.0, "variance must be non-negative");
    EffectEstimate::wald(
        delta_10.point - delta_20_est,
        delta_10.variance + delta_20_var,
        delta_10.scale,
        level,
    )
}
