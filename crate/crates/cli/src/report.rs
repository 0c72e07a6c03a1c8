//! CSV records written by the commands.

use std::collections::BTreeMap;
use std::path::Path;

use dlra_hjb::IntervalReport;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One controller on one initial condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub ic_id: usize,
    pub method: String,
    pub cost: f64,
    /// False if the closed loop blew up or the open-loop optimizer stopped
    /// early.
    pub converged: bool,
    /// Set on every row of an initial condition whose open-loop reference
    /// did not converge.
    pub omitted: bool,
    pub wall_time: f64,
}

impl EvaluationRow {
    pub fn counts(&self) -> bool {
        self.converged && !self.omitted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub mean_cost: f64,
    pub count: usize,
    pub mean_wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<EvaluationRow>,
    pub aggregates: Vec<Aggregate>,
}

impl EvaluationReport {
    pub fn from_rows(rows: Vec<EvaluationRow>) -> Self {
        let aggregates = aggregate(&rows);
        Self { rows, aggregates }
    }

    pub fn aggregate_for(&self, method: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn mean_cost(&self, method: &str) -> Option<f64> {
        self.aggregate_for(method).map(|a| a.mean_cost)
    }
}

/// Per-method means over the rows that are converged and not omitted, in
/// order of first appearance.
pub fn aggregate(rows: &[EvaluationRow]) -> Vec<Aggregate> {
    let mut order: Vec<&str> = Vec::new();
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for row in rows {
        if !order.contains(&row.method.as_str()) {
            order.push(&row.method);
        }
        let entry = sums.entry(&row.method).or_insert((0.0, 0.0, 0));
        if row.counts() {
            entry.0 += row.cost;
            entry.1 += row.wall_time;
            entry.2 += 1;
        }
    }
    order
        .into_iter()
        .map(|m| {
            let (cost, time, count) = sums[m];
            let c = count as f64;
            Aggregate {
                method: m.to_string(),
                mean_cost: if count > 0 { cost / c } else { f64::NAN },
                count,
                mean_wall_time: if count > 0 { time / c } else { f64::NAN },
            }
        })
        .collect()
}

/// One line of the per-interval diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub interval: usize,
    pub time: f64,
    pub method: String,
    pub iterations: usize,
    pub metric: f64,
    pub residual: f64,
    pub converged: bool,
    pub dropped: usize,
    pub seconds: f64,
}

impl DiagnosticsRow {
    pub fn new(report: &IntervalReport, tau: f64) -> Self {
        Self {
            interval: report.interval,
            time: report.interval as f64 * tau,
            method: report.method.name().to_string(),
            iterations: report.iterations,
            metric: report.final_metric(),
            residual: report.fit_residual,
            converged: report.converged,
            dropped: report.dropped,
            seconds: report.seconds,
        }
    }
}

/// Diagnostics sorted by interval.
pub fn diagnostics(reports: &[IntervalReport], tau: f64) -> Vec<DiagnosticsRow> {
    let mut rows: Vec<DiagnosticsRow> = reports.iter().map(|r| DiagnosticsRow::new(r, tau)).collect();
    rows.sort_by_key(|r| r.interval);
    rows
}

/// One polynomial degree of the comparison table. Cells hold seconds with two
/// decimals, the mean cost, `failed`, or nothing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub degree: usize,
    pub bellman_time: String,
    pub bellman_cost: String,
    pub dlra_time: String,
    pub dlra_cost: String,
    pub hybrid_time: String,
    pub hybrid_cost: String,
    pub optimal_cost: String,
}

impl TableRow {
    pub fn set(&mut self, method: &str, time: String, cost: String) {
        let (t, c) = match method {
            "bellman" => (&mut self.bellman_time, &mut self.bellman_cost),
            "dlra" => (&mut self.dlra_time, &mut self.dlra_cost),
            _ => (&mut self.hybrid_time, &mut self.hybrid_cost),
        };
        *t = time;
        *c = cost;
    }
}

pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| CliError::csv(path, e))).collect()
}
