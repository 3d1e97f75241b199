//! Treatment-assignment (propensity score) model of the index trial and the
//! combined two-stage weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::IndexPatientData;
use crate::linalg;
use crate::weights::{WeightKind, WeightVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropensityError {
    #[error("perfect separation in the treatment-assignment model")]
    PerfectSeparation,
    #[error("treatment-assignment design matrix is rank deficient")]
    RankDeficient,
    #[error("treatment-assignment fit did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NonConvergence { iterations: usize, score_norm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensitySettings {
    /// Convergence threshold on the largest score-equation component.
    pub score_tol: f64,
    pub max_iter: usize,
    /// Coefficients beyond this magnitude signal separation.
    pub separation_bound: f64,
}

impl Default for PropensitySettings {
    fn default() -> Self {
        Self {
            score_tol: 1e-10,
            max_iter: 100,
            separation_bound: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub beta0: f64,
    /// One coefficient per covariate; zero for covariates dropped as constant.
    pub beta1: Vec<f64>,
    pub propensity_scores: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maximum-likelihood logistic regression of treatment on an intercept plus
/// every non-constant covariate, by Newton-Raphson (IRLS) from zero.
///
/// Constant covariates are aliased with the intercept and are left out of the
/// design; their coefficients are reported as zero.
pub fn fit_propensity(
    ipd: &IndexPatientData,
    opts: &PropensitySettings,
) -> Result<PropensityFit, PropensityError> {
    let x = ipd.covariates();
    let (n, k) = x.dim();
    let active: Vec<usize> = (0..k)
        .filter(|&j| {
            let col = x.column(j);
            let first = col[0];
            col.iter().any(|&v| v != first)
        })
        .collect();
    let m = active.len() + 1;
    let mut design = Vec::with_capacity(n * m);
    for i in 0..n {
        design.push(1.0);
        design.extend(active.iter().map(|&j| x[[i, j]]));
    }
    let t: Vec<f64> = ipd.treatment().iter().map(|&t| f64::from(u8::from(t))).collect();
    let (beta, iterations) = irls(&design, n, m, &t, opts)?;

    let mut beta1 = vec![0.0; k];
    for (slot, &j) in active.iter().enumerate() {
        beta1[j] = beta[slot + 1];
    }
    let scores: Vec<f64> = (0..n)
        .map(|i| expit(dot(&design[i * m..(i + 1) * m], &beta)))
        .collect();
    if scores.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(PropensityError::PerfectSeparation);
    }
    Ok(PropensityFit {
        beta0: beta[0],
        beta1,
        propensity_scores: scores,
        converged: true,
        iterations,
    })
}

/// Newton-Raphson on the binomial log-likelihood for a row-major `n x m` design.
/// Returns the coefficients and the number of Newton steps taken.
fn irls(
    design: &[f64],
    n: usize,
    m: usize,
    t: &[f64],
    opts: &PropensitySettings,
) -> Result<(Vec<f64>, usize), PropensityError> {
    let mut beta = vec![0.0; m];
    let mut eta = vec![0.0; n];
    let mut mu = vec![0.5; n];
    let mut loglik = log_likelihood(&eta, t);
    let mut score = vec![0.0; m];
    let mut info = vec![0.0; m * m];

    for iter in 0..=opts.max_iter {
        score.iter_mut().for_each(|s| *s = 0.0);
        info.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let row = &design[i * m..(i + 1) * m];
            let r = t[i] - mu[i];
            let w = mu[i] * (1.0 - mu[i]);
            for a in 0..m {
                score[a] += r * row[a];
                for b in 0..=a {
                    info[a * m + b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                info[b * m + a] = info[a * m + b];
            }
        }
        let score_norm = score.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if score_norm <= opts.score_tol {
            // a separated design can meet the score tolerance before any
            // coefficient reaches the bound
            if arm_saturated(&mu, t, 1e-6) {
                return Err(PropensityError::PerfectSeparation);
            }
            return Ok((beta, iter));
        }
        if iter == opts.max_iter {
            return Err(PropensityError::NonConvergence {
                iterations: iter,
                score_norm,
            });
        }
        if arm_saturated(&mu, t, 1e-10) {
            return Err(PropensityError::PerfectSeparation);
        }

        let Some(l) = linalg::cholesky(&info, m) else {
            return Err(if iter == 0 {
                PropensityError::RankDeficient
            } else {
                PropensityError::PerfectSeparation
            });
        };
        if iter == 0 && linalg::cholesky_rcond(&l, m) < 1e-14 {
            return Err(PropensityError::RankDeficient);
        }
        let step = linalg::cholesky_solve(&l, m, &score);

        // Step halving keeps the likelihood non-decreasing.
        let mut scale = 1.0;
        let mut accepted = false;
        let mut trial = vec![0.0; m];
        for _ in 0..40 {
            for a in 0..m {
                trial[a] = beta[a] + scale * step[a];
            }
            for i in 0..n {
                eta[i] = dot(&design[i * m..(i + 1) * m], &trial);
            }
            let ll = log_likelihood(&eta, t);
            if ll.is_finite() && ll >= loglik - 1e-12 * loglik.abs() {
                loglik = ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(PropensityError::NonConvergence {
                iterations: iter,
                score_norm,
            });
        }
        beta.copy_from_slice(&trial);
        for i in 0..n {
            mu[i] = expit(eta[i]);
        }
        if beta.iter().any(|b| b.abs() > opts.separation_bound) {
            return Err(PropensityError::PerfectSeparation);
        }
    }
    unreachable!("loop returns on its last iteration")
}

// An arm whose fitted probabilities all sit within `eps` of its own treatment value.
fn arm_saturated(mu: &[f64], t: &[f64], eps: f64) -> bool {
    let saturated = |arm: f64| {
        mu.iter()
            .zip(t)
            .filter(|(_, &y)| y == arm)
            .all(|(&p, &y)| (y - p).abs() < eps)
    };
    saturated(1.0) || saturated(0.0)
}

fn log_likelihood(eta: &[f64], t: &[f64]) -> f64 {
    // t*eta - log(1 + exp(eta)), computed stably
    eta.iter()
        .zip(t)
        .map(|(&e, &y)| {
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            y * e - softplus
        })
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse probability of treatment weights: `1/e` for treated, `1/(1-e)` for controls.
pub fn ipt_weights(fit: &PropensityFit, treatment: &[bool]) -> Vec<f64> {
    assert_eq!(fit.propensity_scores.len(), treatment.len());
    fit.propensity_scores
        .iter()
        .zip(treatment)
        .map(|(&e, &t)| if t { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect()
}

/// Rescales trial-assignment odds weights by the IPT weights.
pub fn combine_weights(
    trial_weights: &WeightVector,
    fit: &PropensityFit,
    treatment: &[bool],
) -> WeightVector {
    assert_eq!(trial_weights.len(), treatment.len());
    let values: Vec<f64> = trial_weights
        .values()
        .iter()
        .zip(ipt_weights(fit, treatment))
        .map(|(w, ipt)| w * ipt)
        .collect();
    WeightVector::new(values, WeightKind::Combined)
        .expect("product of positive finite weights is positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn intercept_only(n_treated: usize, n_control: usize) -> IndexPatientData {
        let n = n_treated + n_control;
        let t: Vec<bool> = (0..n).map(|i| i < n_treated).collect();
        IndexPatientData::with_default_names(
            Array2::from_elem((n, 2), 0.6),
            t,
            Array1::zeros(n),
        )
        .unwrap()
    }

    #[test]
    fn equal_arms_give_half() {
        let fit = fit_propensity(&intercept_only(70, 70), &PropensitySettings::default()).unwrap();
        assert!(fit.beta0.abs() < 1e-12);
        assert!(fit.propensity_scores.iter().all(|&e| (e - 0.5).abs() < 1e-12));
        assert!(ipt_weights(&fit, &[true; 140]).iter().all(|&w| (w - 2.0).abs() < 1e-12));
    }

    #[test]
    fn unequal_arms_closed_form() {
        let ipd = intercept_only(60, 40);
        let fit = fit_propensity(&ipd, &PropensitySettings::default()).unwrap();
        assert!((fit.beta0 - (60.0f64 / 40.0).ln()).abs() < 1e-8);
        assert!(fit.propensity_scores.iter().all(|&e| (e - 0.6).abs() < 1e-10));
        let w = ipt_weights(&fit, ipd.treatment());
        assert!((w[0] - 1.0 / 0.6).abs() < 1e-9);
        assert!((w[99] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn separation_detected() {
        let x = Array2::from_shape_vec((6, 1), vec![0.5, 1.0, 1.5, -0.5, -1.0, -1.5]).unwrap();
        let t = vec![true, true, true, false, false, false];
        let ipd = IndexPatientData::with_default_names(x, t, Array1::zeros(6)).unwrap();
        let err = fit_propensity(&ipd, &PropensitySettings::default()).unwrap_err();
        assert_eq!(err, PropensityError::PerfectSeparation);
    }

    #[test]
    fn collinear_covariates_rank_deficient() {
        let x = Array2::from_shape_vec((4, 2), vec![0.1, 0.2, 0.5, 1.0, 0.3, 0.6, 0.9, 1.8]).unwrap();
        let ipd = IndexPatientData::with_default_names(x, vec![true, false, true, false], Array1::zeros(4))
            .unwrap();
        let err = fit_propensity(&ipd, &PropensitySettings::default()).unwrap_err();
        assert_eq!(err, PropensityError::RankDeficient);
    }

    #[test]
    fn reciprocal_arithmetic() {
        let fit = PropensityFit {
            beta0: 0.0,
            beta1: vec![],
            propensity_scores: vec![0.8, 0.8],
            converged: true,
            iterations: 0,
        };
        let w = ipt_weights(&fit, &[true, false]);
        assert!((w[0] - 1.25).abs() < 1e-12);
        assert!((w[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn combined_weights_examples() {
        let fit = PropensityFit {
            beta0: 0.0,
            beta1: vec![],
            propensity_scores: vec![0.25, 0.75],
            converged: true,
            iterations: 0,
        };
        let w = WeightVector::new(vec![1.0, 1.0], WeightKind::TrialOdds).unwrap();
        let c = combine_weights(&w, &fit, &[true, false]);
        assert_eq!(c.values(), &[4.0, 4.0]);
        assert_eq!(c.kind(), WeightKind::Combined);

        let half = PropensityFit {
            propensity_scores: vec![0.5, 0.5],
            ..fit
        };
        let w = WeightVector::new(vec![3f64.powf(-0.75), 3f64.powf(0.25)], WeightKind::TrialOdds).unwrap();
        let c = combine_weights(&w, &half, &[true, false]);
        assert!((c.values()[0] - 0.8774).abs() < 1e-4);
        assert!((c.values()[1] - 2.6321).abs() < 1e-4);
    }
}
