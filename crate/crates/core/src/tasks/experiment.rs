//! End-to-end experiments: trajectory set, task data, training per seed and
//! test-split evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Labels, TaskData};
use super::train::RunControl;
use super::variant::{train_variant, Hyper, ModelArtifact, ModelVariant, Predictor, VariantData, VariantName};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Evaluation, PredictionRecord};
use crate::report::{MetricsReport, ReportRow};
use crate::scenegen::{subsample_indices, Dataset};
use crate::trajset::{build_cover, closest_mode, TrajectorySet};
use crate::varcore::NetworkSpec;

/// One experiment: a variant at one coverage bound and data fraction, over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: VariantName,
    pub epsilon: f64,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_multi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharpening: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_mc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Hyperparameter overrides shared by configs and experiment matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub epochs: Option<usize>,
    pub prior_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub beta: Option<f64>,
    pub lambda_multi: Option<f64>,
    pub sharpening: Option<f64>,
    pub n_mc: Option<usize>,
}

impl HyperOverrides {
    /// Variant defaults with the overrides applied. An explicit batch size
    /// without an explicit beta moves beta to `1 / batch_size`.
    pub fn resolve(&self, name: VariantName) -> Result<ModelVariant> {
        let mut h = Hyper::defaults(name);
        if let Some(e) = self.epochs {
            h.epochs = e;
        }
        if let Some(e) = self.prior_epochs {
            h.prior_epochs = e;
        }
        if let Some(b) = self.batch_size {
            h.batch_size = b;
            if b > 0 {
                h.beta = 1.0 / b as f64;
            }
        }
        if let Some(lr) = self.lr {
            h.lr = lr;
        }
        if let Some(beta) = self.beta {
            h.beta = beta;
        }
        if let Some(s) = self.sharpening {
            h.sharpening = s;
        }
        if let Some(n) = self.n_mc {
            h.n_mc = n;
        }
        if name == VariantName::Loss {
            if let Some(l) = self.lambda_multi {
                h.lambda_multi = Some(l);
            }
        } else if self.lambda_multi.is_some() {
            return Err(Error::Config(format!(
                "lambda_multi only applies to the loss variant, not {name}"
            )));
        }
        ModelVariant::new(name, h)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn overrides(&self) -> HyperOverrides {
        HyperOverrides {
            epochs: self.epochs,
            prior_epochs: self.prior_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            beta: self.beta,
            lambda_multi: self.lambda_multi,
            sharpening: self.sharpening,
            n_mc: self.n_mc,
        }
    }

    pub fn model_variant(&self) -> Result<ModelVariant> {
        self.overrides().resolve(self.variant)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.model_variant()?;
        Ok(())
    }
}

/// Everything shared by the cells of one dataset and coverage bound.
pub struct Prepared<'d> {
    pub dataset: &'d Dataset,
    pub epsilon: f64,
    pub set: TrajectorySet,
    pub network: NetworkSpec,
    /// Drivable-area task over the full training split.
    pub prior_task: TaskData<'d>,
    test_modes: Vec<usize>,
}

impl<'d> Prepared<'d> {
    /// Build the trajectory set from the full training split, prior-task
    /// labels for every training scene and test-split reference modes.
    pub fn new(dataset: &'d Dataset, epsilon: f64) -> Result<Self> {
        let set = build_cover(&dataset.train_futures(), epsilon)?;
        Self::with_set(dataset, epsilon, set)
    }

    pub fn with_set(dataset: &'d Dataset, epsilon: f64, set: TrajectorySet) -> Result<Self> {
        if dataset.test.is_empty() {
            return Err(Error::InvalidArgument("dataset has no test scenes".into()));
        }
        let prior_task = TaskData::new(&dataset.train, &set, Labels::Drivable)?;
        let test_modes = dataset
            .test
            .par_iter()
            .map(|s| closest_mode(&s.future, &set))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            dataset,
            epsilon,
            network: NetworkSpec::desk_default(set.len()),
            set,
            prior_task,
            test_modes,
        })
    }

    /// Observation task over the seeded training subsample.
    pub fn observation_task(&self, variant: VariantName, fraction: f64, seed: u64) -> Result<TaskData<'d>> {
        let idx = subsample_indices(self.dataset.train.len(), fraction, seed)?;
        let labels = if variant == VariantName::Loss {
            Labels::Both
        } else {
            Labels::Mode
        };
        TaskData::from_refs(
            idx.into_iter().map(|i| &self.dataset.train[i]).collect(),
            &self.set,
            labels,
        )
    }

    pub fn train(
        &self,
        variant: &ModelVariant,
        fraction: f64,
        seed: u64,
        control: &RunControl,
    ) -> Result<Option<ModelArtifact>> {
        let observation = self.observation_task(variant.name, fraction, seed)?;
        let data = VariantData {
            prior: Some(&self.prior_task),
            observation: &observation,
        };
        let artifact = train_variant(variant, &self.network, data, &self.set, seed, control)?;
        Ok(artifact.map(|a| ModelArtifact { fraction, ..a }))
    }

    /// Metrics of `artifact` on the full test split.
    pub fn evaluate(&self, artifact: &ModelArtifact, seed: u64) -> Result<Evaluation> {
        let predictor = Predictor::new(artifact, &self.set)?;
        let probs = self
            .dataset
            .test
            .par_iter()
            .map(|s| predictor.predict(s, seed))
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<PredictionRecord<'_>> = self
            .dataset
            .test
            .iter()
            .zip(probs)
            .zip(&self.test_modes)
            .map(|((s, p), &best)| PredictionRecord {
                probs: p,
                gt: s.future.clone(),
                mask: &s.mask,
                pose: *s.pose(),
                best_mode: best,
            })
            .collect();
        evaluate(&records, &self.set)
    }

    /// Train and evaluate one `(variant, fraction, seed)` cell.
    pub fn run_cell(&self, variant: &ModelVariant, fraction: f64, seed: u64) -> Result<(ModelArtifact, ReportRow)> {
        let artifact = self
            .train(variant, fraction, seed, &RunControl::default())?
            .ok_or_else(|| Error::Config("training stopped before completion".into()))?;
        let row = self.row(&artifact)?;
        Ok((artifact, row))
    }

    pub fn row(&self, artifact: &ModelArtifact) -> Result<ReportRow> {
        let eval = self.evaluate(artifact, artifact.seed)?;
        Ok(ReportRow {
            variant: artifact.variant.name,
            epsilon: self.epsilon,
            fraction: artifact.fraction,
            modes: self.set.len(),
            seed: artifact.seed,
            test_scenes: eval.records,
            nll_clamped: eval.nll_clamped,
            metrics: eval.metrics,
        })
    }
}

/// Run every seed of `cfg` on `dataset` (seeds in parallel) and aggregate.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<MetricsReport> {
    cfg.validate()?;
    let variant = cfg.model_variant()?;
    let prepared = Prepared::new(dataset, cfg.epsilon)?;
    let rows = cfg
        .seeds
        .par_iter()
        .map(|&seed| prepared.run_cell(&variant, cfg.fraction, seed).map(|(_, row)| row))
        .collect::<Result<Vec<_>>>()?;
    let echo = serde_json::json!({
        "experiment": cfg,
        "resolved": variant,
        "dataset": {
            "seed": dataset.manifest.seed,
            "n_scenes": dataset.manifest.n_scenes,
            "train_corpus_digest": dataset.manifest.train_corpus_digest,
        },
    });
    MetricsReport::from_rows(echo, rows)
}
