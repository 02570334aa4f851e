//! Informed continual learning for multi-modal trajectory prediction.
//!
//! A drivable-area task is learned first; its weight posterior then serves as
//! the prior of the observation task. The crate contains the variational
//! network core ([`varcore`]), trajectory sets ([`trajset`]), a synthetic scene
//! generator ([`scenegen`]), the training pipelines for every model variant
//! ([`tasks`]) and the evaluation metrics ([`metrics`]).

pub mod error;
pub mod io;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod scenegen;
pub mod tasks;
pub mod trajset;
pub mod varcore;

pub use error::{Error, Result};
