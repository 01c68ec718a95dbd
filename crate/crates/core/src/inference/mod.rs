//! Variational Bayesian policy learning over truncated stick-breaking
//! controllers.

pub mod cavi;
pub mod elbo;
pub mod learn;
pub mod messages;
pub mod prune;
pub mod sticks;
pub mod value;

pub use cavi::{cavi_iteration, prepare_sweep, Batch, SweepContext, VariationalState};
pub use elbo::elbo;
pub use learn::{learn, ElboTrace, LearnOutcome, RoundSummary, TraceRow};
pub use messages::{forward, forward_backward, NodePosterior, SufficientStats};
pub use prune::prune_nodes;
pub use sticks::{expected_log_sticks, point_estimate, stick_weights, PointEstimate};
pub use value::{discounted_return, empirical_value, nu_weights, reward_range};
