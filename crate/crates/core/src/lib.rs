//! Sign-flip-aware dataflow scheduling for output-stationary systolic arrays.
//!
//! Partial sums that change sign between cycles exercise the accumulator's
//! longest carry chain and dominate timing errors. This crate reorders input
//! channels and clusters output channels so PSUMs cross zero as rarely as
//! possible, without changing any result, and provides the simulator, error
//! model and brute-force references needed to measure the effect.

pub mod bundle;
pub mod cli;
pub mod cluster;
pub mod error;
pub mod error_model;
pub mod forward;
pub mod oracle;
pub mod plan;
pub mod reorder;
pub mod report;
pub mod sim;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
