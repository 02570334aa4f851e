//! The six model variants: hyperparameters, training plans, artifacts and prediction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{scaled_state, TaskData};
use super::task::{OBSERVATION_TASK_TAG, PRIOR_TASK_TAG};
use super::train::{run_plan, ModelState, PhaseConfig, PhaseMode, PriorSource, RunControl, Schedule, TrainLog};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::rng::derive_seed;
use crate::scenegen::Scene;
use crate::trajset::{corpus_digest, TrajectorySet};
use crate::varcore::{
    deterministic_predict, he_means, init_params_for_layout, mc_predict, ClassifierLoss, Network, NetworkSpec,
};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Weight draws averaged at prediction time by the sampling variants.
pub const PREDICT_SAMPLES: usize = 7;

const INIT_TAG: u64 = 0x1417;
const PREDICT_TAG: u64 = 0x9e0d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Base,
    Vi,
    Loss,
    Transfer,
    Gvcl,
    GvclDet,
}

impl VariantName {
    pub const ALL: [VariantName; 6] = [
        VariantName::Base,
        VariantName::Vi,
        VariantName::Loss,
        VariantName::Transfer,
        VariantName::Gvcl,
        VariantName::GvclDet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantName::Base => "base",
            VariantName::Vi => "vi",
            VariantName::Loss => "loss",
            VariantName::Transfer => "transfer",
            VariantName::Gvcl => "gvcl",
            VariantName::GvclDet => "gvcl-det",
        }
    }

    /// Trains a distribution over weights.
    pub fn is_variational(&self) -> bool {
        matches!(self, VariantName::Vi | VariantName::Gvcl | VariantName::GvclDet)
    }

    /// Predicts by averaging sampled networks.
    pub fn samples_at_prediction(&self) -> bool {
        matches!(self, VariantName::Vi | VariantName::Gvcl)
    }

    /// Uses the drivable-area labels during training.
    pub fn uses_prior_task(&self) -> bool {
        matches!(
            self,
            VariantName::Loss | VariantName::Transfer | VariantName::Gvcl | VariantName::GvclDet
        )
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantName::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Training hyperparameters of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Epochs on the observation task.
    pub epochs: usize,
    /// Epochs on the drivable-area task (loss, transfer and gvcl variants).
    pub prior_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// KL weight of the variational variants.
    pub beta: f64,
    /// Weight of the off-road term (loss variant only).
    pub lambda_multi: Option<f64>,
    /// Precision multiplier of the informed prior.
    pub sharpening: f64,
    /// Weight draws per minibatch.
    pub n_mc: usize,
}

pub const DEFAULT_LAMBDA_MULTI: f64 = 0.01;
pub const DETERMINISTIC_EPOCHS: usize = 20;
pub const VARIATIONAL_EPOCHS: usize = 200;

impl Hyper {
    pub fn defaults(variant: VariantName) -> Self {
        let (batch_size, lr) = match variant {
            VariantName::Base => (16, 0.0008),
            VariantName::Transfer => (16, 0.0002),
            VariantName::Loss => (16, 0.0001),
            VariantName::Vi | VariantName::Gvcl | VariantName::GvclDet => (12, 0.003),
        };
        let epochs = if variant.is_variational() {
            VARIATIONAL_EPOCHS
        } else {
            DETERMINISTIC_EPOCHS
        };
        Hyper {
            epochs,
            prior_epochs: epochs,
            batch_size,
            lr,
            beta: 1.0 / batch_size as f64,
            lambda_multi: (variant == VariantName::Loss).then_some(DEFAULT_LAMBDA_MULTI),
            sharpening: 1.0,
            n_mc: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub name: VariantName,
    pub hyper: Hyper,
}

impl ModelVariant {
    pub fn new(name: VariantName, hyper: Hyper) -> Result<Self> {
        let v = ModelVariant { name, hyper };
        v.validate()?;
        Ok(v)
    }

    pub fn with_defaults(name: VariantName) -> Self {
        ModelVariant {
            name,
            hyper: Hyper::defaults(name),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        match (self.name, h.lambda_multi) {
            (VariantName::Loss, None) => return Err(Error::Config("the loss variant needs lambda_multi".into())),
            (VariantName::Loss, Some(l)) if !(l.is_finite() && l >= 0.0) => {
                return Err(Error::Config(format!("lambda_multi must be non-negative, got {l}")))
            }
            (VariantName::Loss, Some(_)) => {}
            (name, Some(_)) => {
                return Err(Error::Config(format!(
                    "lambda_multi only applies to the loss variant, not {name}"
                )))
            }
            (_, None) => {}
        }
        for phase in self.plan() {
            phase.validate()?;
        }
        Ok(())
    }

    /// Phases in training order; every variant ends on the observation task.
    pub fn plan(&self) -> Vec<PhaseConfig> {
        let h = &self.hyper;
        let det = |name: &str, tag, loss, epochs| PhaseConfig {
            name: name.into(),
            tag,
            mode: PhaseMode::Deterministic,
            loss,
            epochs,
            batch_size: h.batch_size,
            lr: h.lr,
            schedule: Schedule::Constant,
        };
        let var = |name: &str, tag, loss, epochs, prior| PhaseConfig {
            name: name.into(),
            tag,
            mode: PhaseMode::Variational {
                beta: h.beta,
                prior,
                n_mc: h.n_mc,
            },
            loss,
            epochs,
            batch_size: h.batch_size,
            lr: h.lr,
            schedule: Schedule::LinearDecay,
        };
        match self.name {
            VariantName::Base => vec![det("observation", OBSERVATION_TASK_TAG, ClassifierLoss::Ce, h.epochs)],
            VariantName::Loss => vec![det(
                "observation",
                OBSERVATION_TASK_TAG,
                ClassifierLoss::CePlusBce {
                    lambda: h.lambda_multi.unwrap_or(DEFAULT_LAMBDA_MULTI),
                },
                h.epochs,
            )],
            VariantName::Transfer => vec![
                det("prior", PRIOR_TASK_TAG, ClassifierLoss::Bce, h.prior_epochs),
                det("observation", OBSERVATION_TASK_TAG, ClassifierLoss::Ce, h.epochs),
            ],
            VariantName::Vi => vec![var(
                "observation",
                OBSERVATION_TASK_TAG,
                ClassifierLoss::Ce,
                h.epochs,
                PriorSource::StandardNormal,
            )],
            VariantName::Gvcl | VariantName::GvclDet => vec![
                var(
                    "prior",
                    PRIOR_TASK_TAG,
                    ClassifierLoss::Bce,
                    h.prior_epochs,
                    PriorSource::StandardNormal,
                ),
                var(
                    "observation",
                    OBSERVATION_TASK_TAG,
                    ClassifierLoss::Ce,
                    h.epochs,
                    PriorSource::PreviousPosterior {
                        sharpening: h.sharpening,
                    },
                ),
            ],
        }
    }

    /// Seeded starting point: He-initialized means, plus small stds for the
    /// variational variants.
    pub fn initial_state(&self, net: &Network, seed: u64) -> ModelState {
        let init_seed = derive_seed(seed, &[INIT_TAG]);
        if self.name.is_variational() {
            ModelState::Variational(init_params_for_layout(net.layout(), init_seed))
        } else {
            ModelState::Deterministic(he_means(net.layout(), init_seed))
        }
    }
}

/// Per-phase training data. `prior` is required by plans with a prior phase.
#[derive(Clone, Copy, Debug)]
pub struct VariantData<'a, 's> {
    pub prior: Option<&'a TaskData<'s>>,
    pub observation: &'a TaskData<'s>,
}

/// A trained model with everything needed to predict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub variant: ModelVariant,
    pub network: NetworkSpec,
    pub state: ModelState,
    pub trajset_hash: String,
    pub task_id: u32,
    pub seed: u64,
    /// Share of the training split used for the observation task.
    pub fraction: f64,
    pub log: TrainLog,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: ModelArtifact = read_json(path)?;
        if a.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported artifact version {}",
                a.format_version
            )));
        }
        Ok(a)
    }
}

pub fn trajset_hash(set: &TrajectorySet) -> String {
    corpus_digest(&set.elements)
}

/// Train `variant` from its seeded initial state.
pub fn train_variant(
    variant: &ModelVariant,
    spec: &NetworkSpec,
    data: VariantData<'_, '_>,
    set: &TrajectorySet,
    seed: u64,
    control: &RunControl,
) -> Result<Option<ModelArtifact>> {
    variant.validate()?;
    if spec.num_outputs() != set.len() {
        return Err(Error::Shape(format!(
            "network has {} outputs, trajectory set has {} modes",
            spec.num_outputs(),
            set.len()
        )));
    }
    let net = Network::new(spec)?;
    let plan = variant.plan();
    let mut tasks = Vec::with_capacity(plan.len());
    for phase in &plan {
        let task = if phase.tag == PRIOR_TASK_TAG {
            data.prior
                .ok_or_else(|| Error::Config(format!("{} needs drivable-area task data", variant.name)))?
        } else {
            data.observation
        };
        tasks.push(task);
    }
    let init = variant.initial_state(&net, seed);
    let Some(result) = run_plan(&net, &plan, &tasks, init, seed, control)? else {
        return Ok(None);
    };
    Ok(Some(ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        variant: variant.clone(),
        network: spec.clone(),
        state: result.state,
        trajset_hash: trajset_hash(set),
        task_id: plan.len() as u32,
        seed,
        fraction: 1.0,
        log: result.log,
    }))
}

/// Prediction front end for one artifact.
pub struct Predictor<'a> {
    artifact: &'a ModelArtifact,
    net: Network,
}

impl<'a> Predictor<'a> {
    pub fn new(artifact: &'a ModelArtifact, set: &TrajectorySet) -> Result<Self> {
        let net = Network::new(&artifact.network)?;
        if net.num_outputs() != set.len() {
            return Err(Error::Shape(format!(
                "model predicts {} modes, trajectory set has {}",
                net.num_outputs(),
                set.len()
            )));
        }
        if artifact.state.len() != net.num_params() {
            return Err(Error::Shape(format!(
                "artifact has {} parameters, network needs {}",
                artifact.state.len(),
                net.num_params()
            )));
        }
        if artifact.trajset_hash != trajset_hash(set) {
            return Err(Error::Config(
                "artifact was trained on a different trajectory set".into(),
            ));
        }
        Ok(Predictor { artifact, net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Probabilities over the set. Sampling variants average
    /// [`PREDICT_SAMPLES`] draws seeded from `seed` and the scene id; the
    /// others take one softmax of the mean weights.
    pub fn predict(&self, scene: &Scene, seed: u64) -> Result<Vec<f64>> {
        let state = scaled_state(scene);
        match &self.artifact.state {
            ModelState::Variational(p) if self.artifact.variant.name.samples_at_prediction() => mc_predict(
                &self.net,
                p,
                &scene.raster,
                &state,
                PREDICT_SAMPLES,
                derive_seed(seed, &[PREDICT_TAG, scene.id]),
            ),
            s => deterministic_predict(&self.net, s.means(), &scene.raster, &state),
        }
    }
}
