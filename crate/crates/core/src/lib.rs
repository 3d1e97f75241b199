//! Anchored matching-adjusted indirect comparison.
//!
//! The crate estimates the marginal effect of treatment A versus B in the
//! population of a competitor trial (B vs C) for which only aggregate data are
//! published, using individual patient data from an index trial (A vs C):
//!
//! * [`weights`] fits trial-assignment odds weights by the method of moments
//!   (standard MAIC), with ESS and percentile truncation.
//! * [`propensity`] fits the treatment-assignment model of the index trial and
//!   forms the combined two-stage weights.
//! * [`estimation`] turns weights into a marginal A vs C effect and performs the
//!   anchored comparison against the published B vs C estimate.
//! * [`bootstrap`] re-estimates the whole pipeline on resampled IPD.
//! * [`sim`] is a Monte Carlo harness for the six-scenario performance study.

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod estimation;
mod linalg;
pub mod method;
mod optim;
pub mod propensity;
pub mod rng;
pub mod sim;
pub mod weights;

pub use bootstrap::{bootstrap_effect, BootstrapError, BootstrapResult, BootstrapSettings};
pub use data::{AggregateSummary, DataError, IndexPatientData};
pub use estimation::{EffectEstimate, EffectScale};
pub use method::{Method, MethodSettings};
pub use propensity::{fit_propensity, PropensityFit};
pub use weights::{fit_trial_weights, TrialWeightFit, WeightKind, WeightVector};
