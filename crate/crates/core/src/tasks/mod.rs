//! Continual-learning pipeline: task data, training plans, model variants and experiments.

pub mod conjugate;
pub mod data;
pub mod experiment;
pub mod matrix;
pub mod task;
pub mod train;
pub mod variant;

pub use data::{scaled_state, Labels, TaskData, STATE_SCALE};
pub use experiment::{run_experiment, ExperimentConfig, HyperOverrides, Prepared};
pub use matrix::{run_matrix, ExperimentMatrix};
pub use task::{train_observation_task, train_prior_task, PosteriorCheckpoint, TaskKind, TaskSpec};
pub use train::{run_plan, ModelState, PhaseConfig, PhaseMode, PriorSource, RunControl, Schedule, TrainLog};
pub use variant::{train_variant, Hyper, ModelArtifact, ModelVariant, Predictor, VariantData, VariantName};
