use thiserror::Error;

use crate::logistic::FitMeta;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("population has no cells")]
    EmptyPopulation,

    #[error("duplicate cell (x={x}, u={u}, r={r})")]
    DuplicateCell { x: u32, u: u32, r: u8 },

    #[error("cell (x={x}, u={u}, r={r}) has negative mass {mass}")]
    NegativeMass { x: u32, u: u32, r: u8, mass: f64 },

    #[error("cell (x={x}, u={u}, r={r}) has mu={mu} outside [0, 1]")]
    MuOutOfRange { x: u32, u: u32, r: u8, mu: f64 },

    #[error("group indicator must be 0 or 1, got {0}")]
    InvalidGroup(u8),

    #[error("total population mass must be positive, got {0}")]
    ZeroTotalMass(f64),

    #[error("stratum (x={x}, r={r:?}) has zero mass")]
    EmptyStratum { x: u32, r: Option<u8> },

    #[error("stratum (x={x}, r={r:?}) has zero selected mass")]
    NoSelectedMass { x: u32, r: Option<u8> },

    #[error("invalid decision rule: {0}")]
    InvalidRule(String),

    #[error("selection probability requires a noisy rule")]
    DeterministicRule,

    #[error("no selected records to fit y_given_selected")]
    NoLabels,

    #[error("IRLS did not converge after {} iterations (max |gradient| = {:e})", .0.iterations, .0.grad_norm)]
    NonConvergence(FitMeta),

    #[error("stratum (x={x}, r={r:?}) is outside the fitted support")]
    OffSupport { x: u32, r: Option<u8> },

    #[error("group indicator is required by a group-aware predictor")]
    MissingGroup,

    #[error("unknown feature level {level} in column {column}")]
    UnknownLevel { column: usize, level: u32 },

    #[error("tau grid is empty")]
    EmptyGrid,

    #[error("tau grid must be strictly ascending")]
    GridNotAscending,

    #[error("missing prediction for stratum (x={x}, r={r})")]
    MissingStratum { x: u32, r: u8 },

    #[error("group {0} has no scored members")]
    EmptyGroup(u8),

    #[error("mu value {0} is not in the stratum's support")]
    MuOffSupport(f64),

    #[error("required column {0:?} not found in CSV header")]
    UnmappedColumn(String),

    #[error("row {row}: column {column:?} has non-binary value {value:?}")]
    NonBinary {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no searched records to split")]
    EmptySearched,

    #[error("infeasible calibration target for group {group}: {requested} searches requested, {available} records")]
    Infeasible {
        group: u8,
        requested: usize,
        available: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
