//! Command line front end and the named experiments.

pub mod builtin;
pub mod cli;
pub mod experiments;

pub use cli::run;
pub use experiments::{
    experiment_convergence, experiment_ex51, experiment_ex52_table1, Experiment, ExperimentConfig,
    Report,
};
