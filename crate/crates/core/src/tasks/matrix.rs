//! Grids of experiments over variants, coverage bounds, data fractions and seeds.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{HyperOverrides, Prepared};
use super::variant::{ModelVariant, VariantName};
use crate::error::{Error, Result};
use crate::report::{MetricsReport, ReportRow};
use crate::scenegen::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub variants: Vec<VariantName>,
    pub epsilons: Vec<f64>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Applied to every variant; `lambda_multi` only reaches the loss variant.
    #[serde(default)]
    pub hyper: HyperOverrides,
}

/// One `(variant, epsilon, fraction, seed)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub variant: ModelVariant,
    pub epsilon: f64,
    pub fraction: f64,
    pub seed: u64,
}

impl ExperimentMatrix {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: ExperimentMatrix = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.epsilons.is_empty() || self.fractions.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "variants, epsilons, fractions and seeds must be non-empty".into(),
            ));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::Config(format!("epsilon must be positive, got {e}")));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!("fraction must lie in (0, 1], got {f}")));
        }
        self.resolved_variants()?;
        Ok(())
    }

    fn resolved_variants(&self) -> Result<Vec<ModelVariant>> {
        self.variants
            .iter()
            .map(|&v| {
                let mut h = self.hyper.clone();
                if v != VariantName::Loss {
                    h.lambda_multi = None;
                }
                h.resolve(v)
            })
            .collect()
    }

    /// Cells of one coverage bound in grid order: variant, fraction, seed.
    pub fn cells(&self, epsilon: f64) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        for variant in self.resolved_variants()? {
            for &fraction in &self.fractions {
                for &seed in &self.seeds {
                    out.push(Cell {
                        variant: variant.clone(),
                        epsilon,
                        fraction,
                        seed,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Train and evaluate every cell on a pool of `jobs` workers. Rows come back
/// in grid order (epsilon, variant, fraction, seed) whatever the scheduling.
pub fn run_matrix(matrix: &ExperimentMatrix, dataset: &Dataset, jobs: usize) -> Result<MetricsReport> {
    matrix.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let mut rows: Vec<ReportRow> = Vec::new();
    for &epsilon in &matrix.epsilons {
        let cells = matrix.cells(epsilon)?;
        let chunk = pool.install(|| -> Result<Vec<ReportRow>> {
            let prepared = Prepared::new(dataset, epsilon)?;
            cells
                .par_iter()
                .map(|c| prepared.run_cell(&c.variant, c.fraction, c.seed).map(|(_, row)| row))
                .collect()
        })?;
        rows.extend(chunk);
    }
    let echo = serde_json::json!({
        "matrix": matrix,
        "dataset": {
            "seed": dataset.manifest.seed,
            "n_scenes": dataset.manifest.n_scenes,
            "train_corpus_digest": dataset.manifest.train_corpus_digest,
        },
    });
    MetricsReport::from_rows(echo, rows)
}
