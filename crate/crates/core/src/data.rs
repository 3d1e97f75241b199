//! Index-trial IPD and competitor-trial aggregate summaries.
//!
//! Covariates are identified by name at the file boundary and by column index
//! everywhere else. The IPD CSV layout is `treatment,outcome,<cov1>,<cov2>,...`
//! and the aggregate summary is a JSON document:
//!
//! ```json
//! {"covariate_means": {"x1": 0.6}, "effect_estimate": -0.2, "effect_variance": 0.04, "sample_size": 300}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TREATMENT_COLUMN: &str = "treatment";
pub const OUTCOME_COLUMN: &str = "outcome";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: non-finite value")]
    NonFinite { row: usize, column: String },
    #[error("row {row}: treatment must be 0 or 1, got `{value}`")]
    BadTreatment { row: usize, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("treatment arm empty")]
    TreatmentArmEmpty,
    #[error("comparator arm empty")]
    ComparatorArmEmpty,
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("need at least one covariate")]
    NoCovariates,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("duplicate covariate name `{0}`")]
    DuplicateName(String),
    #[error("effect modifier `{0}` is not a covariate column")]
    UnknownEffectModifier(String),
    #[error("effect modifier set is empty")]
    NoEffectModifiers,
    #[error("effect modifier column {0} listed twice")]
    DuplicateEffectModifier(usize),
    #[error("effect modifier column {index} out of range for {k} covariates")]
    EffectModifierOutOfRange { index: usize, k: usize },
    #[error("no published mean for effect modifier `{0}`")]
    UnmatchedEffectModifier(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("effect variance must be non-negative, got {0}")]
    NegativeVariance(f64),
    #[error("`{0}` must be finite")]
    NonFiniteField(String),
    #[error("sample size must be positive")]
    ZeroSampleSize,
}

/// Individual patient data of the index (A vs C) trial.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPatientData {
    covariates: Array2<f64>,
    treatment: Vec<bool>,
    outcome: Array1<f64>,
    covariate_names: Vec<String>,
    effect_modifiers: Vec<usize>,
}

impl IndexPatientData {
    pub fn new(
        covariates: Array2<f64>,
        treatment: Vec<bool>,
        outcome: Array1<f64>,
        covariate_names: Vec<String>,
        effect_modifiers: Vec<usize>,
    ) -> Result<Self, DataError> {
        let (n, k) = covariates.dim();
        if k == 0 {
            return Err(DataError::NoCovariates);
        }
        if n < 2 {
            return Err(DataError::TooFewSubjects(n));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(DataError::Dimension(format!(
                "{n} covariate rows, {} treatments, {} outcomes",
                treatment.len(),
                outcome.len()
            )));
        }
        if covariate_names.len() != k {
            return Err(DataError::Dimension(format!(
                "{k} covariate columns but {} names",
                covariate_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        for ((row, col), v) in covariates.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    row: row + 1,
                    column: covariate_names[col].clone(),
                });
            }
        }
        if let Some(row) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: row + 1,
                column: OUTCOME_COLUMN.into(),
            });
        }
        check_arms(&treatment)?;
        if effect_modifiers.is_empty() {
            return Err(DataError::NoEffectModifiers);
        }
        let mut seen = HashSet::new();
        for &j in &effect_modifiers {
            if j >= k {
                return Err(DataError::EffectModifierOutOfRange { index: j, k });
            }
            if !seen.insert(j) {
                return Err(DataError::DuplicateEffectModifier(j));
            }
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            covariate_names,
            effect_modifiers,
        })
    }

    /// Convenience constructor naming covariates `x1..xk` with every covariate an effect modifier.
    pub fn with_default_names(
        covariates: Array2<f64>,
        treatment: Vec<bool>,
        outcome: Array1<f64>,
    ) -> Result<Self, DataError> {
        let k = covariates.ncols();
        Self::new(
            covariates,
            treatment,
            outcome,
            default_names(k),
            (0..k).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn k(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> &Array1<f64> {
        &self.outcome
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn effect_modifiers(&self) -> &[usize] {
        &self.effect_modifiers
    }

    pub fn effect_modifier_names(&self) -> Vec<&str> {
        self.effect_modifiers
            .iter()
            .map(|&j| self.covariate_names[j].as_str())
            .collect()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t).count()
    }

    /// Builds the dataset made of the given rows (with repetition).
    ///
    /// Fails with an empty-arm error when the rows miss one of the arms.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, DataError> {
        let treatment: Vec<bool> = rows.iter().map(|&i| self.treatment[i]).collect();
        check_arms(&treatment)?;
        if rows.len() < 2 {
            return Err(DataError::TooFewSubjects(rows.len()));
        }
        Ok(Self {
            covariates: self.covariates.select(ndarray::Axis(0), rows),
            treatment,
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            covariate_names: self.covariate_names.clone(),
            effect_modifiers: self.effect_modifiers.clone(),
        })
    }

    /// Writes the dataset in the IPD CSV layout. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![TREATMENT_COLUMN.to_string(), OUTCOME_COLUMN.to_string()];
        header.extend(self.covariate_names.iter().cloned());
        out.write_record(&header)?;
        for i in 0..self.n() {
            let mut record = vec![
                if self.treatment[i] { "1" } else { "0" }.to_string(),
                self.outcome[i].to_string(),
            ];
            record.extend(self.covariates.row(i).iter().map(|v| v.to_string()));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_arms(treatment: &[bool]) -> Result<(), DataError> {
    if !treatment.iter().any(|&t| t) {
        return Err(DataError::TreatmentArmEmpty);
    }
    if treatment.iter().all(|&t| t) {
        return Err(DataError::ComparatorArmEmpty);
    }
    Ok(())
}

pub fn default_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("x{j}")).collect()
}

/// Loads IPD from a CSV file; see [`read_ipd`].
pub fn load_ipd(
    path: impl AsRef<Path>,
    effect_modifier_names: &[String],
) -> Result<IndexPatientData, DataError> {
    read_ipd(File::open(path)?, effect_modifier_names)
}

/// Parses IPD from CSV. Every column other than `treatment` and `outcome` is a
/// covariate, kept in file order. An empty `effect_modifier_names` makes every
/// covariate an effect modifier.
pub fn read_ipd<R: Read>(
    reader: R,
    effect_modifier_names: &[String],
) -> Result<IndexPatientData, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let t_col = position(TREATMENT_COLUMN)?;
    let y_col = position(OUTCOME_COLUMN)?;
    let cov_cols: Vec<usize> = (0..header.len()).filter(|&c| c != t_col && c != y_col).collect();
    if cov_cols.is_empty() {
        return Err(DataError::NoCovariates);
    }
    let names: Vec<String> = cov_cols.iter().map(|&c| header[c].clone()).collect();

    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut flat = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let t = parse_cell(&record[t_col], row, &header[t_col])?;
        treatment.push(match t {
            1.0 => true,
            0.0 => false,
            _ => {
                return Err(DataError::BadTreatment {
                    row,
                    value: record[t_col].to_string(),
                })
            }
        });
        outcome.push(parse_cell(&record[y_col], row, &header[y_col])?);
        for &c in &cov_cols {
            flat.push(parse_cell(&record[c], row, &header[c])?);
        }
    }
    let n = treatment.len();
    let covariates = Array2::from_shape_vec((n, names.len()), flat)
        .map_err(|e| DataError::Dimension(e.to_string()))?;
    if effect_modifier_names.is_empty() {
        let all = (0..names.len()).collect();
        return IndexPatientData::new(covariates, treatment, Array1::from(outcome), names, all);
    }
    let mut modifiers = Vec::with_capacity(effect_modifier_names.len());
    for name in effect_modifier_names {
        let j = names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::UnknownEffectModifier(name.clone()))?;
        modifiers.push(j);
    }
    IndexPatientData::new(covariates, treatment, Array1::from(outcome), names, modifiers)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64, DataError> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
        return Err(DataError::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(DataError::NonFinite {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

/// Published aggregate data of the competitor (B vs C) trial.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSummary {
    covariate_names: Vec<String>,
    covariate_means: Vec<f64>,
    effect_estimate: f64,
    effect_variance: f64,
    sample_size: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct AldDocument {
    covariate_means: Option<BTreeMap<String, f64>>,
    effect_estimate: Option<f64>,
    effect_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_size: Option<u64>,
}

impl AggregateSummary {
    pub fn new(
        covariate_names: Vec<String>,
        covariate_means: Vec<f64>,
        effect_estimate: f64,
        effect_variance: f64,
        sample_size: Option<u64>,
    ) -> Result<Self, DataError> {
        if covariate_names.len() != covariate_means.len() {
            return Err(DataError::Dimension(format!(
                "{} covariate names but {} means",
                covariate_names.len(),
                covariate_means.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        for (name, m) in covariate_names.iter().zip(&covariate_means) {
            if !m.is_finite() {
                return Err(DataError::NonFiniteField(format!("covariate_means.{name}")));
            }
        }
        if !effect_estimate.is_finite() {
            return Err(DataError::NonFiniteField("effect_estimate".into()));
        }
        if !effect_variance.is_finite() {
            return Err(DataError::NonFiniteField("effect_variance".into()));
        }
        if effect_variance < 0.0 {
            return Err(DataError::NegativeVariance(effect_variance));
        }
        if sample_size == Some(0) {
            return Err(DataError::ZeroSampleSize);
        }
        Ok(Self {
            covariate_names,
            covariate_means,
            effect_estimate,
            effect_variance,
            sample_size,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_means(&self) -> &[f64] {
        &self.covariate_means
    }

    pub fn mean_of(&self, name: &str) -> Option<f64> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .map(|j| self.covariate_means[j])
    }

    pub fn effect_estimate(&self) -> f64 {
        self.effect_estimate
    }

    pub fn effect_variance(&self) -> f64 {
        self.effect_variance
    }

    pub fn sample_size(&self) -> Option<u64> {
        self.sample_size
    }

    pub fn to_json(&self) -> Result<String, DataError> {
        let doc = AldDocument {
            covariate_means: Some(
                self.covariate_names
                    .iter()
                    .cloned()
                    .zip(self.covariate_means.iter().copied())
                    .collect(),
            ),
            effect_estimate: Some(self.effect_estimate),
            effect_variance: Some(self.effect_variance),
            sample_size: self.sample_size,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

pub fn load_ald(path: impl AsRef<Path>) -> Result<AggregateSummary, DataError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_ald(&text)
}

pub fn parse_ald(text: &str) -> Result<AggregateSummary, DataError> {
    let doc: AldDocument = serde_json::from_str(text)?;
    let means = doc
        .covariate_means
        .ok_or(DataError::MissingField("covariate_means"))?;
    let estimate = doc
        .effect_estimate
        .ok_or(DataError::MissingField("effect_estimate"))?;
    let variance = doc
        .effect_variance
        .ok_or(DataError::MissingField("effect_variance"))?;
    let (names, values) = means.into_iter().unzip();
    AggregateSummary::new(names, values, estimate, variance, doc.sample_size)
}

/// Published means of the effect modifiers, in effect-modifier order.
pub fn effect_modifier_targets(
    ipd: &IndexPatientData,
    summary: &AggregateSummary,
) -> Result<Vec<f64>, DataError> {
    ipd.effect_modifiers()
        .iter()
        .map(|&j| {
            let name = &ipd.covariate_names()[j];
            summary
                .mean_of(name)
                .ok_or_else(|| DataError::UnmatchedEffectModifier(name.clone()))
        })
        .collect()
}

/// Effect modifiers centred on the published competitor means, `n x p`.
pub fn center_covariates(
    ipd: &IndexPatientData,
    summary: &AggregateSummary,
) -> Result<Array2<f64>, DataError> {
    let targets = effect_modifier_targets(ipd, summary)?;
    Ok(center_on_targets(ipd, &targets))
}

pub fn center_on_targets(ipd: &IndexPatientData, targets: &[f64]) -> Array2<f64> {
    assert_eq!(targets.len(), ipd.effect_modifiers().len());
    let mut z = ipd
        .covariates()
        .select(ndarray::Axis(1), ipd.effect_modifiers());
    for (mut col, &theta) in z.columns_mut().into_iter().zip(targets) {
        col.mapv_inplace(|v| v - theta);
    }
    z
}
