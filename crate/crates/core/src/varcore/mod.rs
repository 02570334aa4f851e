//! Mean-field Gaussian variational network core.

pub mod checkpoint;
pub mod kl;
pub mod network;
pub mod objective;
pub mod optim;
pub mod params;
pub mod predict;

pub use checkpoint::{load_params, save_params, ParamsFile};
pub use kl::kl_diag_gaussian;
pub use network::{forward, Activation, Activations, InputShape, LayerSpec, Network, NetworkSpec, ParamLayout};
pub use objective::{
    beta_elbo, beta_elbo_loss, deterministic_loss, softmax, ClassifierLikelihood, ClassifierLoss, ElboEval,
    LabeledInput, LikelihoodKind, LikelihoodModel, Objective, ParamGrad, Prior,
};
pub use optim::{lr_schedule, sgd_step, sgd_step_deterministic, sgd_step_implicit_prior, softplus_inv};
pub use params::{he_means, init_params, init_params_for_layout, sample_weights, VariationalParams, WeightSample};
pub use predict::{deterministic_predict, mc_predict};
