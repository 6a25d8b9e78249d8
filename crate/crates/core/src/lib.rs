//! Continuous-time Bayesian networks (CTBNs) with fast and slow components.
//!
//! The crate builds joint generators from conditional rate tables, integrates
//! the master equation, samples exact trajectories, estimates rates by
//! maximum likelihood, and reduces a network with fast components to an
//! effective network over its slow components.

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod format;
pub mod harness;
mod linalg;
pub mod model;
pub mod reduction;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{
    ComponentId, ComponentSpec, CtbnModel, InitialDistribution, JointState, RateMatrix, Scale,
    StateIndex, StateSpace,
};
