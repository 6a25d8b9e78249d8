use thiserror::Error;

use crate::model::{ComponentId, Violation};

#[derive(Debug, Error)]
pub enum Error {
    #[error("model is invalid ({} violation(s)): {}", .0.len(), format_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("component {component}: local state {value} out of range (cardinality {cardinality})")]
    StateOutOfRange {
        component: ComponentId,
        value: usize,
        cardinality: usize,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("state index {index} out of range for a space of {size} states")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("state space has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("generator is not ergodic; communicating classes: {}", format_classes(.classes))]
    NotErgodic { classes: Vec<Vec<usize>> },

    #[error(
        "fast subsystem {fast_set:?} is not ergodic with slow components clamped at {}",
        format_assignment(.assignment)
    )]
    AssumptionViolated {
        fast_set: Vec<ComponentId>,
        assignment: Vec<(ComponentId, usize)>,
    },

    #[error(
        "set is not upward closed: parent {missing_parent} of component {component} is missing"
    )]
    NotUpwardClosed {
        component: ComponentId,
        missing_parent: ComponentId,
    },

    #[error("component {0} is not fast")]
    NotFast(ComponentId),

    #[error("component {0} is not slow")]
    NotSlow(ComponentId),

    #[error("unknown component {0}")]
    UnknownComponent(ComponentId),

    #[error("invalid stop rule: {0}")]
    InvalidStop(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn format_classes(classes: &[Vec<usize>]) -> String {
    classes
        .iter()
        .map(|c| format!("{c:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn format_assignment(a: &[(ComponentId, usize)]) -> String {
    if a.is_empty() {
        return "{}".to_string();
    }
    let inner = a
        .iter()
        .map(|(id, v)| format!("X{id}={v}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!("{{{inner}}}")
}
