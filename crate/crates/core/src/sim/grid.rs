use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::config::GridConfig;
use super::metrics::{compute_metrics, empty_metrics, EstimateRow, MethodMetrics};
use super::replicate::{run_replicate, Discard, ReplicateOutcome};
use super::SimError;
use crate::method::Method;

pub const METRICS_HEADER: [&str; 12] = [
    "scenario",
    "method",
    "bias",
    "bias_mcse",
    "ese",
    "ese_mcse",
    "mse",
    "mse_mcse",
    "coverage",
    "coverage_mcse",
    "n_used",
    "n_discarded",
];

pub const ESTIMATES_HEADER: [&str; 6] = ["scenario", "method", "replicate", "delta_12", "ci_lower", "ci_upper"];

#[derive(Debug, Clone, PartialEq)]
pub struct DiscardRow {
    pub scenario: String,
    pub method: Method,
    pub replicate: usize,
    pub reason: Discard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub metrics: Vec<MethodMetrics>,
    pub estimates: Vec<EstimateRow>,
    pub discards: Vec<DiscardRow>,
}

impl GridResult {
    pub fn metrics_for(&self, scenario: &str, method: Method) -> Option<&MethodMetrics> {
        self.metrics
            .iter()
            .find(|m| m.scenario == scenario && m.method == method)
    }
}

/// Runs every replicate of every scenario and summarises them per method.
/// `progress` is called with (completed, total) after each replicate.
pub fn run_grid(grid: &GridConfig, progress: Option<&(dyn Fn(usize, usize) + Sync)>) -> Result<GridResult, SimError> {
    grid.validate()?;
    let units: Vec<(usize, usize)> = grid
        .scenarios
        .iter()
        .enumerate()
        .flat_map(|(s, cfg)| (0..cfg.n_replicates).map(move |r| (s, r)))
        .collect();
    let total = units.len();
    let done = AtomicUsize::new(0);
    let outcomes: Vec<ReplicateOutcome> = units
        .par_iter()
        .map(|&(s, r)| {
            let out = run_replicate(&grid.scenarios[s], s as u64, r);
            if let Some(cb) = progress {
                cb(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            }
            out
        })
        .collect();

    let mut estimates = Vec::new();
    let mut discards = Vec::new();
    for (&(s, _), outcome) in units.iter().zip(&outcomes) {
        let scenario = &grid.scenarios[s].name;
        for (method, record) in &outcome.records {
            match record {
                Ok(rec) => estimates.push(EstimateRow {
                    scenario: scenario.clone(),
                    method: *method,
                    replicate: outcome.replicate,
                    delta_12: rec.delta_12,
                    ci_lower: rec.ci_lower,
                    ci_upper: rec.ci_upper,
                }),
                Err(reason) => discards.push(DiscardRow {
                    scenario: scenario.clone(),
                    method: *method,
                    replicate: outcome.replicate,
                    reason: reason.clone(),
                }),
            }
        }
    }

    let mut metrics = Vec::new();
    for cfg in &grid.scenarios {
        for method in Method::ALL {
            let rows: Vec<EstimateRow> = estimates
                .iter()
                .filter(|e| e.scenario == cfg.name && e.method == method)
                .cloned()
                .collect();
            let n_discarded = discards
                .iter()
                .filter(|d| d.scenario == cfg.name && d.method == method)
                .count();
            metrics.push(metric_row(&cfg.name, method, &rows, cfg.true_delta_12, n_discarded));
        }
    }
    Ok(GridResult {
        metrics,
        estimates,
        discards,
    })
}

fn metric_row(scenario: &str, method: Method, rows: &[EstimateRow], true_delta: f64, n_discarded: usize) -> MethodMetrics {
    compute_metrics(scenario, method, rows, true_delta, n_discarded)
        .unwrap_or_else(|_| empty_metrics(scenario, method, rows.len(), n_discarded))
}

/// Recomputes the metrics table from estimate rows. Scenarios keep their
/// first-appearance order and methods the canonical order. Discards per
/// scenario are `replicates - n_used`, with `replicates` taken from
/// `replicates_per_scenario` or else inferred as the largest replicate index + 1.
pub fn metrics_from_estimates(
    estimates: &[EstimateRow],
    true_delta: f64,
    replicates_per_scenario: Option<usize>,
) -> Vec<MethodMetrics> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(&str, Method), Vec<EstimateRow>> = BTreeMap::new();
    let mut max_rep: BTreeMap<&str, usize> = BTreeMap::new();
    for row in estimates {
        if !order.contains(&row.scenario.as_str()) {
            order.push(&row.scenario);
        }
        groups
            .entry((&row.scenario, row.method))
            .or_default()
            .push(row.clone());
        let m = max_rep.entry(&row.scenario).or_insert(0);
        *m = (*m).max(row.replicate + 1);
    }
    let mut out = Vec::new();
    for scenario in order {
        let replicates = replicates_per_scenario.unwrap_or(max_rep[scenario]);
        for method in Method::ALL {
            let rows = groups.remove(&(scenario, method)).unwrap_or_default();
            let discarded = replicates.saturating_sub(rows.len());
            out.push(metric_row(scenario, method, &rows, true_delta, discarded));
        }
    }
    out
}

pub fn write_metrics_csv<W: Write>(writer: W, metrics: &[MethodMetrics]) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(METRICS_HEADER)?;
    for m in metrics {
        out.write_record([
            m.scenario.clone(),
            m.method.name().to_string(),
            m.bias.to_string(),
            m.bias_mcse.to_string(),
            m.ese.to_string(),
            m.ese_mcse.to_string(),
            m.mse.to_string(),
            m.mse_mcse.to_string(),
            m.coverage.to_string(),
            m.coverage_mcse.to_string(),
            m.n_used.to_string(),
            m.n_discarded.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_estimates_csv<W: Write>(writer: W, estimates: &[EstimateRow]) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(ESTIMATES_HEADER)?;
    for e in estimates {
        out.write_record([
            e.scenario.clone(),
            e.method.name().to_string(),
            e.replicate.to_string(),
            e.delta_12.to_string(),
            e.ci_lower.to_string(),
            e.ci_upper.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_estimates_csv<R: Read>(reader: R) -> Result<Vec<EstimateRow>, SimError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ESTIMATES_HEADER {
        return Err(SimError::Schema(format!(
            "estimates header must be `{}`, found `{}`",
            ESTIMATES_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64, SimError> {
            record[j]
                .parse()
                .map_err(|_| SimError::Schema(format!("line {line}: bad number `{}`", &record[j])))
        };
        rows.push(EstimateRow {
            scenario: record[0].to_string(),
            method: record[1]
                .parse()
                .map_err(|e| SimError::Schema(format!("line {line}: {e}")))?,
            replicate: record[2]
                .parse()
                .map_err(|_| SimError::Schema(format!("line {line}: bad replicate `{}`", &record[2])))?,
            delta_12: num(3)?,
            ci_lower: num(4)?,
            ci_upper: num(5)?,
        });
    }
    Ok(rows)
}
