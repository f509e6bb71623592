//! Quadratic transfers for collective decisions: the mechanism, its
//! equilibria, the synthetic-player variant, the prediction-aggregation
//! stage and the two-stage pipeline, plus efficiency bounds.

pub mod aggregation;
pub mod analysis;
pub mod equilibrium;
pub mod error;
pub mod instance;
pub mod qtm;
pub mod squap;
pub mod synthetic;

pub use error::{Error, Result};
pub use instance::{ExternalWelfare, MechanismParams, ValueProfile};
pub use qtm::{softmax, SoftmaxOutcome, VoteProfile};
