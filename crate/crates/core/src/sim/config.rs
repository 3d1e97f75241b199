use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::SimError;
use crate::linalg;
use crate::method::MethodSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Exactly `n/2` subjects per arm, arm labels permuted at random.
    Fixed,
    /// Independent fair coin per subject (redrawn if an arm comes out empty).
    Bernoulli,
}

/// Parameters of one simulation scenario. Keys of the config file are the
/// field names below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_index: usize,
    pub n_competitor: usize,
    pub k: usize,
    pub index_cov_means: Vec<f64>,
    pub competitor_cov_means: Vec<f64>,
    pub cov_sd: f64,
    pub pairwise_corr: f64,
    pub beta0: f64,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta_t: f64,
    pub error_sd: f64,
    pub n_replicates: usize,
    #[serde(rename = "bootstrap_B")]
    pub bootstrap_b: usize,
    pub truncation_percentile: f64,
    pub base_seed: u64,
    pub true_delta_12: f64,
    pub allocation: Allocation,
    pub max_failure_rate: f64,
    pub level: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            n_index: 140,
            n_competitor: 300,
            k: 3,
            index_cov_means: vec![0.5; 3],
            competitor_cov_means: vec![0.6; 3],
            cov_sd: 0.4,
            pairwise_corr: 0.2,
            beta0: 5.0,
            beta1: vec![2.0; 3],
            beta2: vec![1.0; 3],
            beta_t: -2.0,
            error_sd: 1.0,
            n_replicates: 5000,
            bootstrap_b: 2000,
            truncation_percentile: 95.0,
            base_seed: 20_220_915,
            true_delta_12: 0.0,
            allocation: Allocation::Fixed,
            max_failure_rate: 0.05,
            level: 0.95,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(format!("{}: {msg}", self.name)));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        for (key, v) in [
            ("index_cov_means", &self.index_cov_means),
            ("competitor_cov_means", &self.competitor_cov_means),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
        ] {
            if v.len() != self.k {
                return bad(format!("{key} has {} entries, expected k = {}", v.len(), self.k));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{key} must be finite"));
            }
        }
        if !(self.cov_sd > 0.0 && self.cov_sd.is_finite()) {
            return bad("cov_sd must be positive".into());
        }
        if self.pairwise_corr.abs().partial_cmp(&1.0) != Some(std::cmp::Ordering::Less) {
            return bad("pairwise_corr must lie in (-1, 1)".into());
        }
        if linalg::cholesky(&self.covariance(), self.k).is_none() {
            return bad("covariance matrix is not positive definite".into());
        }
        if !(self.error_sd >= 0.0 && self.error_sd.is_finite()) {
            return bad("error_sd must be non-negative".into());
        }
        if self.n_index < 2 {
            return bad("n_index must be at least 2".into());
        }
        if self.n_competitor < 4 {
            return bad("n_competitor must be at least 4".into());
        }
        if self.n_replicates == 0 {
            return bad("n_replicates must be positive".into());
        }
        if self.bootstrap_b < 2 {
            return bad("bootstrap_B must be at least 2".into());
        }
        if !(self.truncation_percentile > 0.0 && self.truncation_percentile <= 100.0) {
            return bad("truncation_percentile must lie in (0, 100]".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad("max_failure_rate must lie in [0, 1]".into());
        }
        if ![self.beta0, self.beta_t, self.true_delta_12].iter().all(|v| v.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        Ok(())
    }

    /// Row-major `k x k` covariance with common SD and exchangeable correlation.
    pub fn covariance(&self) -> Vec<f64> {
        let var = self.cov_sd * self.cov_sd;
        let mut sigma = vec![self.pairwise_corr * var; self.k * self.k];
        for j in 0..self.k {
            sigma[j * self.k + j] = var;
        }
        sigma
    }

    /// Marginal A vs C mean difference in the competitor population,
    /// `beta_t + sum_j beta2_j * theta_j` (mean differences are collapsible).
    pub fn true_delta_10(&self) -> f64 {
        self.beta_t
            + self
                .beta2
                .iter()
                .zip(&self.competitor_cov_means)
                .map(|(b, m)| b * m)
                .sum::<f64>()
    }

    pub fn method_settings(&self) -> MethodSettings {
        MethodSettings {
            truncation_percentile: self.truncation_percentile,
            ..MethodSettings::default()
        }
    }
}

/// A base scenario plus the named scenarios derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub scenarios: Vec<ScenarioConfig>,
}

impl GridConfig {
    /// Two index-trial sizes times three overlap levels, strong to poor overlap
    /// and ascending sample size within each.
    pub fn paper_grid(base: &ScenarioConfig) -> Self {
        let mut scenarios = Vec::with_capacity(6);
        for (label, mean) in [("strong", 0.5), ("moderate", 0.4), ("poor", 0.3)] {
            for n in [140, 200] {
                scenarios.push(ScenarioConfig {
                    name: format!("{label}_n{n}"),
                    n_index: n,
                    index_cov_means: vec![mean; base.k],
                    ..base.clone()
                });
            }
        }
        Self { scenarios }
    }

    /// Parses a config document. Top-level keys are [`ScenarioConfig`] fields
    /// forming the base scenario; an optional `scenarios` array lists per-scenario
    /// overrides (each with a `name`). Without it the default six-scenario grid is used.
    pub fn from_value(mut doc: Value, overrides: &Map<String, Value>) -> Result<Self, SimError> {
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| SimError::Config("config must be a table of keys".into()))?;
        let scenarios = obj.remove("scenarios");
        for (k, v) in overrides {
            obj.insert(k.clone(), v.clone());
        }
        let base: ScenarioConfig = serde_json::from_value(Value::Object(obj.clone()))
            .map_err(|e| SimError::Config(e.to_string()))?;
        let grid = match scenarios {
            None => Self::paper_grid(&base),
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    let Value::Object(fields) = item else {
                        return Err(SimError::Config("each scenario must be a table".into()));
                    };
                    let mut merged = obj.clone();
                    for (k, v) in fields {
                        merged.insert(k, v);
                    }
                    // command-line overrides win over per-scenario values too
                    for (k, v) in overrides {
                        merged.insert(k.clone(), v.clone());
                    }
                    out.push(
                        serde_json::from_value(Value::Object(merged))
                            .map_err(|e| SimError::Config(e.to_string()))?,
                    );
                }
                Self { scenarios: out }
            }
            Some(_) => return Err(SimError::Config("`scenarios` must be an array".into())),
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Reads a JSON (`.json`) or TOML (anything else) config file.
    pub fn load(path: &Path, overrides: &Map<String, Value>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        let doc: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?
        } else {
            let table: toml::Table = toml::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?;
            serde_json::to_value(table).map_err(|e| SimError::Config(e.to_string()))?
        };
        Self::from_value(doc, overrides)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.scenarios.is_empty() {
            return Err(SimError::Config("no scenarios".into()));
        }
        let mut names = std::collections::HashSet::new();
        for s in &self.scenarios {
            s.validate()?;
            if !names.insert(s.name.as_str()) {
                return Err(SimError::Config(format!("duplicate scenario name `{}`", s.name)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_give_null_true_effect() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.true_delta_10() - -0.2).abs() < 1e-12);
        assert_eq!(cfg.true_delta_12, 0.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn paper_grid_layout() {
        let grid = GridConfig::paper_grid(&ScenarioConfig::default());
        let names: Vec<_> = grid.scenarios.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["strong_n140", "strong_n200", "moderate_n140", "moderate_n200", "poor_n140", "poor_n200"]
        );
        assert_eq!(grid.scenarios[5].index_cov_means, vec![0.3; 3]);
        assert_eq!(grid.scenarios[3].n_index, 200);
    }

    #[test]
    fn overrides_and_scenarios() {
        let doc = json!({
            "n_replicates": 10,
            "bootstrap_B": 50,
            "scenarios": [{"name": "a", "n_index": 60}, {"name": "b", "index_cov_means": [0.3, 0.3, 0.3]}]
        });
        let mut over = Map::new();
        over.insert("n_replicates".into(), json!(3));
        let grid = GridConfig::from_value(doc, &over).unwrap();
        assert_eq!(grid.scenarios.len(), 2);
        assert_eq!(grid.scenarios[0].n_index, 60);
        assert_eq!(grid.scenarios[1].n_index, 140);
        assert!(grid.scenarios.iter().all(|s| s.n_replicates == 3 && s.bootstrap_b == 50));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(GridConfig::from_value(json!({"n_replicas": 3}), &Map::new()).is_err());
        assert!(GridConfig::from_value(json!({"pairwise_corr": 1.0}), &Map::new()).is_err());
        assert!(GridConfig::from_value(json!({"pairwise_corr": -0.6}), &Map::new()).is_err());
        assert!(GridConfig::from_value(json!({"cov_sd": 0.0}), &Map::new()).is_err());
        assert!(GridConfig::from_value(json!({"beta1": [1.0]}), &Map::new()).is_err());
    }
}
