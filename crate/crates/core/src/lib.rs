//! Simulation lab for biased selection into training data.
//!
//! A decision-maker searches individuals whose risk clears a group-specific
//! threshold; a data scientist then trains on whatever labels that process
//! revealed. The crate computes the resulting predictors exactly (by
//! enumerating a finite population) and by sampling, sweeps the
//! decision-maker's bias parameter, and runs the stop-level simulation
//! pipeline on CSV data or on a bundled synthetic generator.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chart;
pub mod decision;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod logistic;
pub mod oracle;
pub mod population;
pub mod runner;
pub mod sqf;

pub use error::{Error, Result};
