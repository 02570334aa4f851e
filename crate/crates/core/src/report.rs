//! Metric reports: per-seed rows, seed aggregates, JSON, CSV and text tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::metrics::{MetricValues, METRIC_NAMES};
use crate::tasks::VariantName;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Metrics of one trained model on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: VariantName,
    pub epsilon: f64,
    pub fraction: f64,
    pub modes: usize,
    pub seed: u64,
    pub test_scenes: usize,
    pub nll_clamped: usize,
    pub metrics: MetricValues,
}

impl ReportRow {
    pub fn experiment(&self) -> String {
        experiment_name(self.variant, self.epsilon, self.fraction)
    }
}

fn experiment_name(variant: VariantName, epsilon: f64, fraction: f64) -> String {
    format!("{variant}/eps={epsilon}/frac={fraction}")
}

/// Mean and sample standard deviation over the seeds of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: VariantName,
    pub epsilon: f64,
    pub fraction: f64,
    pub modes: usize,
    pub seeds: Vec<u64>,
    pub mean: MetricValues,
    /// `n - 1` denominator; zero for a single seed.
    pub std: MetricValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    /// The configuration that produced the report.
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Sample mean and standard deviation (`n - 1` denominator, zero when `n = 1`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

impl MetricsReport {
    /// Group rows by experiment in order of first appearance and aggregate.
    pub fn from_rows(config: serde_json::Value, rows: Vec<ReportRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("a report needs at least one row".into()));
        }
        let mut groups: Vec<(String, Vec<&ReportRow>)> = Vec::new();
        for row in &rows {
            let key = row.experiment();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, g)) => g.push(row),
                None => groups.push((key, vec![row])),
            }
        }
        let aggregates = groups
            .into_iter()
            .map(|(_, g)| {
                let mut mean = [0.0; 11];
                let mut std = [0.0; 11];
                for (i, (m, s)) in mean.iter_mut().zip(std.iter_mut()).enumerate() {
                    let vals: Vec<f64> = g.iter().map(|r| r.metrics.as_array()[i]).collect();
                    (*m, *s) = mean_std(&vals);
                }
                AggregateRow {
                    variant: g[0].variant,
                    epsilon: g[0].epsilon,
                    fraction: g[0].fraction,
                    modes: g[0].modes,
                    seeds: g.iter().map(|r| r.seed).collect(),
                    mean: MetricValues::from_array(mean),
                    std: MetricValues::from_array(std),
                }
            })
            .collect();
        Ok(MetricsReport {
            format_version: REPORT_FORMAT_VERSION,
            config,
            rows,
            aggregates,
        })
    }

    pub fn aggregate(&self, variant: VariantName) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.variant == variant)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: MetricsReport = read_json(path)?;
        if r.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported report version {}",
                r.format_version
            )));
        }
        Ok(r)
    }

    /// One line per `(experiment, seed)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,variant,epsilon,fraction,modes,seed");
        for (name, _) in METRIC_NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.experiment(),
                r.variant,
                r.epsilon,
                r.fraction,
                r.modes,
                r.seed
            );
            for v in r.metrics.as_array() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Aligned table: per-seed rows, then one mean row per experiment. Within
    /// each `(epsilon, fraction)` group the best mean per metric carries an
    /// asterisk.
    pub fn to_table(&self) -> String {
        let mut header = vec!["variant".to_string(), "eps".into(), "frac".into(), "seed".into()];
        header.extend(METRIC_NAMES.iter().map(|(n, _)| n.to_string()));
        let mut lines: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let mut line = vec![
                r.variant.to_string(),
                r.epsilon.to_string(),
                r.fraction.to_string(),
                r.seed.to_string(),
            ];
            line.extend(r.metrics.as_array().iter().map(|v| format!("{v:.4}")));
            lines.push(line);
        }
        for a in &self.aggregates {
            let peers: Vec<&AggregateRow> = self
                .aggregates
                .iter()
                .filter(|b| b.epsilon == a.epsilon && b.fraction == a.fraction)
                .collect();
            let mut line = vec![
                a.variant.to_string(),
                a.epsilon.to_string(),
                a.fraction.to_string(),
                "mean".into(),
            ];
            let means = a.mean.as_array();
            let stds = a.std.as_array();
            for (i, (_, higher_better)) in METRIC_NAMES.iter().enumerate() {
                let best = peers.iter().map(|b| b.mean.as_array()[i]).fold(
                    if *higher_better {
                        f64::NEG_INFINITY
                    } else {
                        f64::INFINITY
                    },
                    |acc, v| {
                        if *higher_better {
                            acc.max(v)
                        } else {
                            acc.min(v)
                        }
                    },
                );
                let mark = if peers.len() > 1 && means[i] == best { "*" } else { "" };
                line.push(format!("{:.4}±{:.4}{mark}", means[i], stds[i]));
            }
            lines.push(line);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}", w = *w))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
