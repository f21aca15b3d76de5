//! Bilevel multi-objective evolutionary optimization with Pareto-set prediction.
//!
//! A bilevel problem nests one optimization task inside another: every
//! upper-level (UL) decision vector is evaluated together with a lower-level
//! (LL) response that must itself be Pareto-optimal for the inner task. This
//! crate implements a nested evolutionary solver for the two-objective /
//! two-objective case in which the expensive inner search is partially
//! replaced by a learned model that maps a UL vector (plus a scalar position
//! parameter) onto the inner Pareto set.
//!
//! Module map:
//! - [`moea`]: population machinery shared by both levels (DE variation,
//!   polynomial mutation, constrained non-dominated ranking, distance-based
//!   subset selection, environmental selection).
//! - [`psp`]: the Pareto-set predictor (dataset assembly, training,
//!   prediction, serialization).
//! - [`problems`]: benchmark problem suite and true-front generation.
//! - [`metrics`]: IGD, 2-D hypervolume, normalized LL IGD, and stagnation
//!   monitors used for termination.
//! - [`framework`]: the nested algorithm itself (variable-association audit,
//!   inner searches, main loop, final re-evaluation).
//! - [`harness`]: experiment runner, statistics, and file emission.

pub mod framework;
pub mod harness;
pub mod metrics;
pub mod moea;
pub mod problems;
pub mod psp;
mod util;

use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the module that raises them.
#[derive(Debug, Error)]
pub enum BlemoError {
    #[error("differential evolution requires at least 4 members, got {0}")]
    PopulationTooSmall(usize),
    #[error("subset selection target must be at least 1")]
    EmptySelection,
    #[error("empty set passed to {0}")]
    EmptyInput(&'static str),
    #[error("training archive is empty")]
    EmptyArchive,
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("dataset has {0} rows; at least {1} are required")]
    DatasetTooSmall(usize, usize),
    #[error("input outside the upper-level box: component {index} = {value}")]
    InputOutOfBounds { index: usize, value: f64 },
    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),
    #[error("problem `{0}` does not support variable set {1}")]
    UnsupportedSet(String, String),
    #[error("problem `{0}` has no true-front sampler")]
    NoPfSampler(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing columns in {file}: expected {expected}")]
    MissingColumns { file: String, expected: String },
    #[error("no seeds given")]
    NoSeeds,
    #[error("sample too small for the rank-sum test (need >= 3 per group)")]
    SampleTooSmall,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, BlemoError>;
