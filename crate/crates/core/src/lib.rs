//! Wi-Fi / LTE-LAA channel contention simulator and a nonparametric Bayesian
//! learner for per-agent finite-state-controller policies.

pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fsc;
pub mod inference;
pub mod model;
pub mod special;
pub mod trajectory;

pub use config::{AgentKind, EpsilonCurve, ExperimentConfig, LearningConfig, PriorHyperparams, SimConfig};
pub use error::{Error, Result};
