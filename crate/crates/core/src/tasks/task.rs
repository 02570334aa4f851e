//! The two-task chain: a drivable-area task whose posterior becomes the prior
//! of the observation task.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::TaskData;
use super::train::{run_plan, ModelState, PhaseConfig, PhaseMode, PriorSource, RunControl, Schedule, TrainLog};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::varcore::{ClassifierLoss, LikelihoodKind, Network, VariationalParams};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Stream tags of the two tasks.
pub const PRIOR_TASK_TAG: u64 = 1;
pub const OBSERVATION_TASK_TAG: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    PriorKnowledge,
    Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub loss: LikelihoodKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub beta: f64,
    pub schedule: Schedule,
    /// Weight draws per minibatch.
    pub n_mc: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.loss) {
            (TaskKind::PriorKnowledge, LikelihoodKind::MultiLabelBce)
            | (TaskKind::Observation, LikelihoodKind::MultiClassCe) => {}
            (kind, loss) => return Err(Error::Config(format!("{kind:?} task cannot use {loss:?}"))),
        }
        self.phase(PriorSource::StandardNormal).validate()
    }

    fn phase(&self, prior: PriorSource) -> PhaseConfig {
        let (name, tag) = match self.kind {
            TaskKind::PriorKnowledge => ("prior", PRIOR_TASK_TAG),
            TaskKind::Observation => ("observation", OBSERVATION_TASK_TAG),
        };
        PhaseConfig {
            name: name.into(),
            tag,
            mode: PhaseMode::Variational {
                beta: self.beta,
                prior,
                n_mc: self.n_mc,
            },
            loss: ClassifierLoss::from(self.loss),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.base_lr,
            schedule: self.schedule,
        }
    }
}

/// A task posterior, ready to act as the next task's prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorCheckpoint {
    pub format_version: u32,
    pub params: VariationalParams,
    pub task_id: u32,
    /// Precision multiplier applied when used as a prior.
    pub sharpening: f64,
}

impl PosteriorCheckpoint {
    pub fn new(params: VariationalParams, task_id: u32, sharpening: f64) -> Result<Self> {
        let ckpt = PosteriorCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params,
            task_id,
            sharpening,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        if self.task_id == 0 {
            return Err(Error::InvalidArgument("task ids start at 1".into()));
        }
        if !(self.sharpening.is_finite() && self.sharpening >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sharpening must be >= 1, got {}",
                self.sharpening
            )));
        }
        VariationalParams::new(
            self.params.means().to_vec(),
            self.params.stds().to_vec(),
            self.params.layout().clone(),
        )?;
        Ok(())
    }

    pub fn with_sharpening(mut self, sharpening: f64) -> Result<Self> {
        self.sharpening = sharpening;
        self.validate()?;
        Ok(self)
    }

    /// The prior this checkpoint induces.
    pub fn as_prior(&self) -> Result<VariationalParams> {
        self.params.sharpened(self.sharpening)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: PosteriorCheckpoint = read_json(path)?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

fn single_phase(
    net: &Network,
    phase: PhaseConfig,
    data: &TaskData<'_>,
    init: VariationalParams,
    seed: u64,
) -> Result<(VariationalParams, TrainLog)> {
    let result = run_plan(
        net,
        &[phase],
        &[data],
        ModelState::Variational(init),
        seed,
        &RunControl::default(),
    )?
    .ok_or_else(|| Error::Config("training stopped before completion".into()))?;
    match result.state {
        ModelState::Variational(p) => Ok((p, result.log)),
        ModelState::Deterministic(_) => Err(Error::Config("variational phase returned deterministic weights".into())),
    }
}

/// Fit the drivable-area task against the standard-normal prior. The returned
/// checkpoint has task id 1 and sharpening 1.
pub fn train_prior_task(
    net: &Network,
    spec: &TaskSpec,
    data: &TaskData<'_>,
    init: VariationalParams,
    seed: u64,
) -> Result<(PosteriorCheckpoint, TrainLog)> {
    spec.validate()?;
    if spec.kind != TaskKind::PriorKnowledge {
        return Err(Error::Config("train_prior_task needs a prior-knowledge task".into()));
    }
    if data.drivable().is_none() {
        return Err(Error::LabelMismatch("prior task data lacks drivable labels".into()));
    }
    let (params, log) = single_phase(net, spec.phase(PriorSource::StandardNormal), data, init, seed)?;
    Ok((PosteriorCheckpoint::new(params, 1, 1.0)?, log))
}

/// Fit the observation task, starting from the prior checkpoint's posterior
/// and regularizing towards its sharpened form.
pub fn train_observation_task(
    net: &Network,
    spec: &TaskSpec,
    data: &TaskData<'_>,
    prior: &PosteriorCheckpoint,
    seed: u64,
) -> Result<(PosteriorCheckpoint, TrainLog)> {
    spec.validate()?;
    prior.validate()?;
    if spec.kind != TaskKind::Observation {
        return Err(Error::Config("train_observation_task needs an observation task".into()));
    }
    if prior.task_id != 1 {
        return Err(Error::InvalidArgument(format!(
            "prior checkpoint has task id {}, expected 1",
            prior.task_id
        )));
    }
    if prior.params.len() != net.num_params() || prior.params.layout() != net.layout() {
        return Err(Error::Shape(format!(
            "prior has {} parameters, network has {}",
            prior.params.len(),
            net.num_params()
        )));
    }
    let phase = spec.phase(PriorSource::PreviousPosterior {
        sharpening: prior.sharpening,
    });
    let (params, log) = single_phase(net, phase, data, prior.params.clone(), seed)?;
    Ok((PosteriorCheckpoint::new(params, 2, prior.sharpening)?, log))
}
