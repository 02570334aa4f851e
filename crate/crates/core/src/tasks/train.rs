//! Epoch loops, multi-phase training plans and resumable snapshots.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::TaskData;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::rng::{derive_seed, rng_from};
use crate::varcore::{
    beta_elbo, deterministic_loss, lr_schedule, sgd_step, sgd_step_deterministic, sgd_step_implicit_prior,
    ClassifierLikelihood, ClassifierLoss, LikelihoodModel, Network, NetworkSpec, Prior, VariationalParams,
};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// Consecutive non-finite steps after which a run is aborted.
pub const DIVERGENCE_STREAK: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// Linear decay from the base rate towards zero over the phase.
    LinearDecay,
}

impl Schedule {
    pub fn lr(&self, epoch: usize, epochs: usize, base: f64) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::LinearDecay => lr_schedule(epoch, epochs, base),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PriorSource {
    StandardNormal,
    /// The state at the start of the phase, stds divided by `sqrt(sharpening)`.
    PreviousPosterior {
        sharpening: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PhaseMode {
    Deterministic,
    Variational { beta: f64, prior: PriorSource, n_mc: usize },
}

/// One training phase over one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub name: String,
    /// Stream tag for shuffling and weight noise.
    pub tag: u64,
    pub mode: PhaseMode,
    pub loss: ClassifierLoss,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "phase {}: epochs and batch size must be positive",
                self.name
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "phase {}: learning rate must be positive",
                self.name
            )));
        }
        if let ClassifierLoss::CePlusBce { lambda } = self.loss {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::Config(format!(
                    "phase {}: lambda must be non-negative",
                    self.name
                )));
            }
        }
        if let PhaseMode::Variational { beta, prior, n_mc } = self.mode {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::Config(format!("phase {}: beta must lie in [0, 1]", self.name)));
            }
            if n_mc == 0 {
                return Err(Error::Config(format!("phase {}: n_mc must be positive", self.name)));
            }
            if let PriorSource::PreviousPosterior { sharpening } = prior {
                if !(sharpening.is_finite() && sharpening >= 1.0) {
                    return Err(Error::Config(format!("phase {}: sharpening must be >= 1", self.name)));
                }
            }
        }
        Ok(())
    }
}

/// Weights carried between phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum ModelState {
    Deterministic(Vec<f64>),
    Variational(VariationalParams),
}

impl ModelState {
    pub fn len(&self) -> usize {
        match self {
            ModelState::Deterministic(w) => w.len(),
            ModelState::Variational(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Deterministic weights, or the variational means.
    pub fn means(&self) -> &[f64] {
        match self {
            ModelState::Deterministic(w) => w,
            ModelState::Variational(p) => p.means(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn phase<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a EpochRecord> + 'a {
        self.epochs.iter().filter(move |r| r.phase == name)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub skipped_steps: usize,
}

/// Minibatch plan and divergence accounting shared by the epoch loops.
#[derive(Clone, Copy, Debug)]
pub struct EpochContext {
    pub seed: u64,
    pub tag: u64,
    pub epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl EpochContext {
    fn order(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from(self.seed, &[self.tag, self.epoch as u64]));
        idx
    }

    fn step_seed(&self, step: usize) -> u64 {
        derive_seed(self.seed, &[self.tag, self.epoch as u64, step as u64])
    }

    fn record_failure(&self, streak: &mut usize, detail: String) -> Result<()> {
        *streak += 1;
        if *streak >= DIVERGENCE_STREAK {
            return Err(Error::Diverged {
                epoch: self.epoch,
                detail: format!("{DIVERGENCE_STREAK} consecutive non-finite steps, last: {detail}"),
            });
        }
        Ok(())
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One shuffled pass of minibatch SGD on the negative beta-ELBO. Each batch
/// contributes `batch_len / n` of the KL term, so a full epoch counts it once.
/// The prior's pull on the means is stepped implicitly (see
/// [`sgd_step_implicit_prior`]).
#[allow(clippy::too_many_arguments)]
pub fn variational_epoch<'a, M: LikelihoodModel>(
    model: &M,
    n: usize,
    example: impl Fn(usize) -> M::Example<'a>,
    mut params: VariationalParams,
    prior: &Prior,
    beta: f64,
    n_mc: usize,
    ctx: &EpochContext,
    streak: &mut usize,
) -> Result<(VariationalParams, EpochStats)> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot train on an empty task".into()));
    }
    let order = ctx.order(n);
    let mut stats = EpochStats::default();
    let mut steps = 0;
    for (step, chunk) in order.chunks(ctx.batch_size).enumerate() {
        let batch: Vec<_> = chunk.iter().map(|&i| example(i)).collect();
        let scale = chunk.len() as f64 / n as f64;
        let eval = beta_elbo(model, beta, scale, prior, &params, &batch, n_mc, ctx.step_seed(step))?;
        if !(eval.loss.is_finite() && all_finite(&eval.grad.means) && all_finite(&eval.grad.rhos)) {
            ctx.record_failure(streak, format!("loss {}", eval.loss))?;
            stats.skipped_steps += 1;
            continue;
        }
        *streak = 0;
        params = if beta != 0.0 {
            let target = prior.resolve(&params)?;
            sgd_step_implicit_prior(&params, &eval.grad, ctx.lr, &target, beta * scale)?
        } else {
            sgd_step(&params, &eval.grad, ctx.lr)?
        };
        stats.loss += eval.loss;
        stats.nll += eval.nll;
        stats.kl += eval.kl;
        steps += 1;
    }
    if steps > 0 {
        let s = steps as f64;
        stats.loss /= s;
        stats.nll /= s;
        stats.kl /= s;
    }
    Ok((params, stats))
}

/// One shuffled pass of minibatch SGD on a deterministic classifier.
pub fn deterministic_epoch(
    net: &Network,
    loss: ClassifierLoss,
    data: &TaskData<'_>,
    weights: &mut [f64],
    ctx: &EpochContext,
    streak: &mut usize,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty task".into()));
    }
    let order = ctx.order(data.len());
    let mut stats = EpochStats::default();
    let mut steps = 0;
    for chunk in order.chunks(ctx.batch_size) {
        let batch: Vec<_> = chunk.iter().map(|&i| data.input(i)).collect();
        let (value, grad) = deterministic_loss(net, loss, weights, &batch)?;
        if !(value.is_finite() && all_finite(&grad)) {
            ctx.record_failure(streak, format!("loss {value}"))?;
            stats.skipped_steps += 1;
            continue;
        }
        *streak = 0;
        sgd_step_deterministic(weights, &grad, ctx.lr)?;
        stats.loss += value;
        steps += 1;
    }
    if steps > 0 {
        stats.loss /= steps as f64;
        stats.nll = stats.loss;
    }
    Ok(stats)
}

/// Checkpointing and early stop for a plan run.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    /// Snapshot written after every epoch and resumed from when present.
    pub snapshot: Option<PathBuf>,
    /// Return after this many epochs (counted in this invocation).
    pub stop_after_epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub plan_digest: String,
    pub phase: usize,
    /// Epochs completed within `phase`.
    pub epoch: usize,
    pub state: ModelState,
    /// KL target of the current phase, if any.
    pub prior: Option<VariationalParams>,
    pub streak: usize,
    pub log: TrainLog,
}

fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_json(&tmp, snap)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Digest over everything that determines a plan's trajectory.
pub fn plan_digest(spec: &NetworkSpec, plan: &[PhaseConfig], init: &ModelState, seed: u64) -> Result<String> {
    let text = serde_json::to_vec(&(spec, plan, init, seed)).map_err(|e| Error::Format(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub state: ModelState,
    pub log: TrainLog,
}

fn phase_prior(mode: &PhaseMode, state: &ModelState) -> Result<Option<VariationalParams>> {
    match (mode, state) {
        (PhaseMode::Variational { prior, .. }, ModelState::Variational(p)) => match prior {
            PriorSource::StandardNormal => Ok(None),
            PriorSource::PreviousPosterior { sharpening } => Ok(Some(p.sharpened(*sharpening)?)),
        },
        (PhaseMode::Deterministic, ModelState::Deterministic(_)) => Ok(None),
        (PhaseMode::Variational { .. }, _) => Err(Error::Config("variational phase needs a variational state".into())),
        (PhaseMode::Deterministic, _) => Err(Error::Config("deterministic phase needs deterministic weights".into())),
    }
}

/// Run `plan` phase by phase, phase `i` on `tasks[i]`, starting from `init`.
/// Returns `None` when stopped early by `control`.
pub fn run_plan(
    net: &Network,
    plan: &[PhaseConfig],
    tasks: &[&TaskData<'_>],
    init: ModelState,
    seed: u64,
    control: &RunControl,
) -> Result<Option<PlanResult>> {
    if plan.len() != tasks.len() {
        return Err(Error::Config(format!(
            "{} phases but {} tasks",
            plan.len(),
            tasks.len()
        )));
    }
    for p in plan {
        p.validate()?;
    }
    if init.len() != net.num_params() {
        return Err(Error::Shape(format!(
            "initial state has {} parameters, network has {}",
            init.len(),
            net.num_params()
        )));
    }
    let digest = plan_digest(net.spec(), plan, &init, seed)?;
    let resumed = match &control.snapshot {
        Some(path) if path.exists() => {
            let snap: Snapshot = read_json(path)?;
            if snap.format_version != SNAPSHOT_FORMAT_VERSION {
                return Err(Error::Format(format!(
                    "unsupported snapshot version {}",
                    snap.format_version
                )));
            }
            if snap.plan_digest != digest {
                return Err(Error::Config(format!(
                    "snapshot {} belongs to a different run",
                    path.display()
                )));
            }
            Some(snap)
        }
        _ => None,
    };
    let mut snap = match resumed {
        Some(s) => s,
        None => {
            let prior = match plan.first() {
                Some(p) => phase_prior(&p.mode, &init)?,
                None => None,
            };
            Snapshot {
                format_version: SNAPSHOT_FORMAT_VERSION,
                plan_digest: digest,
                phase: 0,
                epoch: 0,
                state: init,
                prior,
                streak: 0,
                log: TrainLog::default(),
            }
        }
    };

    let mut budget = control.stop_after_epochs;
    while snap.phase < plan.len() {
        if budget == Some(0) {
            return Ok(None);
        }
        let phase = &plan[snap.phase];
        let task = tasks[snap.phase];
        let ctx = EpochContext {
            seed,
            tag: phase.tag,
            epoch: snap.epoch,
            batch_size: phase.batch_size,
            lr: phase.schedule.lr(snap.epoch, phase.epochs, phase.lr),
        };
        let stats = match (&phase.mode, &mut snap.state) {
            (PhaseMode::Deterministic, ModelState::Deterministic(w)) => {
                deterministic_epoch(net, phase.loss, task, w, &ctx, &mut snap.streak)?
            }
            (PhaseMode::Variational { beta, n_mc, .. }, ModelState::Variational(p)) => {
                let prior = match &snap.prior {
                    Some(q) => Prior::Gaussian(q.clone()),
                    None => Prior::StandardNormal,
                };
                let model = ClassifierLikelihood { net, loss: phase.loss };
                let (next, stats) = variational_epoch(
                    &model,
                    task.len(),
                    |i| task.input(i),
                    p.clone(),
                    &prior,
                    *beta,
                    *n_mc,
                    &ctx,
                    &mut snap.streak,
                )?;
                *p = next;
                stats
            }
            (mode, state) => {
                phase_prior(mode, state)?;
                return Err(Error::Config("phase mode does not match model state".into()));
            }
        };
        snap.log.epochs.push(EpochRecord {
            phase: phase.name.clone(),
            epoch: snap.epoch,
            lr: ctx.lr,
            loss: stats.loss,
            nll: stats.nll,
            kl: stats.kl,
            skipped_steps: stats.skipped_steps,
        });
        snap.epoch += 1;
        if snap.epoch == phase.epochs {
            snap.phase += 1;
            snap.epoch = 0;
            snap.prior = match plan.get(snap.phase) {
                Some(next) => phase_prior(&next.mode, &snap.state)?,
                None => None,
            };
        }
        if let Some(path) = &control.snapshot {
            write_snapshot(path, &snap)?;
        }
        if let Some(b) = budget.as_mut() {
            *b -= 1;
        }
    }
    Ok(Some(PlanResult {
        state: snap.state,
        log: snap.log,
    }))
}
