//! The four analysis methods and the weighting pipeline they share:
//! centre, fit trial weights, optionally fit the propensity model and combine,
//! optionally truncate, then take the weighted regression coefficient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{center_on_targets, IndexPatientData};
use crate::estimation::{weighted_outcome_regression, EstimationError};
use crate::propensity::{combine_weights, fit_propensity, PropensityError, PropensityFit, PropensitySettings};
use crate::weights::{fit_centered, truncate_weights, OptimizerSettings, TrialWeightFit, WeightError, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MAIC")]
    Maic,
    #[serde(rename = "2SMAIC")]
    TwoStageMaic,
    #[serde(rename = "T-MAIC")]
    TruncatedMaic,
    #[serde(rename = "T-2SMAIC")]
    TruncatedTwoStageMaic,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Maic,
        Method::TwoStageMaic,
        Method::TruncatedMaic,
        Method::TruncatedTwoStageMaic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Maic => "MAIC",
            Method::TwoStageMaic => "2SMAIC",
            Method::TruncatedMaic => "T-MAIC",
            Method::TruncatedTwoStageMaic => "T-2SMAIC",
        }
    }

    pub fn is_two_stage(self) -> bool {
        matches!(self, Method::TwoStageMaic | Method::TruncatedTwoStageMaic)
    }

    pub fn is_truncated(self) -> bool {
        matches!(self, Method::TruncatedMaic | Method::TruncatedTwoStageMaic)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_uppercase();
        match key.as_str() {
            "MAIC" => Ok(Method::Maic),
            "2SMAIC" | "TWOSTAGEMAIC" => Ok(Method::TwoStageMaic),
            "TMAIC" | "TRUNCATEDMAIC" => Ok(Method::TruncatedMaic),
            "T2SMAIC" | "TRUNCATEDTWOSTAGEMAIC" => Ok(Method::TruncatedTwoStageMaic),
            _ => Err(format!(
                "unknown method `{s}` (expected MAIC, 2SMAIC, T-MAIC or T-2SMAIC)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub optimizer: OptimizerSettings,
    pub propensity: PropensitySettings,
    pub truncation_percentile: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerSettings::default(),
            propensity: PropensitySettings::default(),
            truncation_percentile: 95.0,
        }
    }
}

/// Why an analysis of one dataset produced no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    InfeasibleBalance,
    TrialNonConvergence,
    PerfectSeparation,
    RankDeficient,
    PropensityNonConvergence,
    EmptyArm,
    InvalidInput,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Failure::InfeasibleBalance => "infeasible balance",
            Failure::TrialNonConvergence => "trial-assignment fit did not converge",
            Failure::PerfectSeparation => "perfect separation in the treatment-assignment model",
            Failure::RankDeficient => "rank-deficient treatment-assignment design",
            Failure::PropensityNonConvergence => "treatment-assignment fit did not converge",
            Failure::EmptyArm => "empty treatment arm",
            Failure::InvalidInput => "invalid input",
        })
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

impl FitError {
    pub fn failure(&self) -> Failure {
        match self {
            FitError::Weights(WeightError::InfeasibleBalance(_)) => Failure::InfeasibleBalance,
            FitError::Weights(WeightError::NonConvergence { .. }) => Failure::TrialNonConvergence,
            FitError::Weights(_) => Failure::InvalidInput,
            FitError::Propensity(PropensityError::PerfectSeparation) => Failure::PerfectSeparation,
            FitError::Propensity(PropensityError::RankDeficient) => Failure::RankDeficient,
            FitError::Propensity(PropensityError::NonConvergence { .. }) => {
                Failure::PropensityNonConvergence
            }
            FitError::Estimation(EstimationError::EmptyArm) => Failure::EmptyArm,
            FitError::Estimation(_) => Failure::InvalidInput,
        }
    }
}

/// Everything one method produces on one dataset.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub method: Method,
    pub trial: TrialWeightFit,
    pub propensity: Option<PropensityFit>,
    pub combined: Option<WeightVector>,
    /// Weights entering the outcome regression.
    pub weights: WeightVector,
    /// Marginal A vs C mean difference in the competitor population.
    pub delta_10: f64,
}

/// Runs one method on a dataset, given the published effect-modifier means.
pub fn run_method(
    ipd: &IndexPatientData,
    targets: &[f64],
    method: Method,
    settings: &MethodSettings,
) -> Result<MethodFit, FitError> {
    let z_star = center_on_targets(ipd, targets);
    let trial = fit_centered(z_star.view(), &settings.optimizer)?;
    let (propensity, combined) = if method.is_two_stage() {
        let ps = fit_propensity(ipd, &settings.propensity)?;
        let combined = combine_weights(&trial.weights, &ps, ipd.treatment());
        (Some(ps), Some(combined))
    } else {
        (None, None)
    };
    let base = combined.as_ref().unwrap_or(&trial.weights);
    let weights = if method.is_truncated() {
        truncate_weights(base, settings.truncation_percentile)
    } else {
        base.clone()
    };
    let delta_10 = weighted_outcome_regression(ipd, &weights)?;
    Ok(MethodFit {
        method,
        trial,
        propensity,
        combined,
        weights,
        delta_10,
    })
}

/// Point estimates of several methods on one dataset. The trial-assignment and
/// treatment-assignment models are fitted once and shared.
pub fn estimate_methods(
    ipd: &IndexPatientData,
    targets: &[f64],
    methods: &[Method],
    settings: &MethodSettings,
) -> Vec<Result<f64, Failure>> {
    let z_star = center_on_targets(ipd, targets);
    let trial = match fit_centered(z_star.view(), &settings.optimizer) {
        Ok(fit) => fit,
        Err(e) => {
            let f = FitError::from(e).failure();
            return methods.iter().map(|_| Err(f)).collect();
        }
    };
    let combined = if methods.iter().any(|m| m.is_two_stage()) {
        Some(
            fit_propensity(ipd, &settings.propensity)
                .map(|ps| combine_weights(&trial.weights, &ps, ipd.treatment()))
                .map_err(|e| FitError::from(e).failure()),
        )
    } else {
        None
    };
    methods
        .iter()
        .map(|&m| {
            let base = if m.is_two_stage() {
                match combined.as_ref().expect("fitted above") {
                    Ok(w) => w,
                    Err(f) => return Err(*f),
                }
            } else {
                &trial.weights
            };
            let slope = if m.is_truncated() {
                weighted_outcome_regression(ipd, &truncate_weights(base, settings.truncation_percentile))
            } else {
                weighted_outcome_regression(ipd, base)
            };
            slope.map_err(|e| FitError::from(e).failure())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn parses_method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("t_2smaic".parse::<Method>().unwrap(), Method::TruncatedTwoStageMaic);
        assert!("ipw".parse::<Method>().is_err());
    }

    #[test]
    fn shared_and_single_paths_agree() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| ((i * (3 + 4 * j)) % 11) as f64 / 10.0);
        let t: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let y = (0..20).map(|i| ((i * 5) % 7) as f64).collect();
        let ipd = IndexPatientData::with_default_names(x, t, y).unwrap();
        let targets = [0.6, 0.55];
        let s = MethodSettings::default();
        let shared = estimate_methods(&ipd, &targets, &Method::ALL, &s);
        for (m, est) in Method::ALL.iter().zip(shared) {
            let single = run_method(&ipd, &targets, *m, &s).unwrap();
            assert_eq!(est.unwrap(), single.delta_10, "{m}");
        }
    }

    #[test]
    fn infeasible_dataset_fails_every_method() {
        let ipd = IndexPatientData::with_default_names(
            Array2::from_shape_vec((4, 1), vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            vec![true, false, true, false],
            array![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let out = estimate_methods(&ipd, &[0.6], &Method::ALL, &MethodSettings::default());
        assert!(out.iter().all(|r| *r == Err(Failure::InfeasibleBalance)));
    }
}
