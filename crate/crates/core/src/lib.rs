#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Gradient integration for multitask-like multimodal learning.
//!
//! Each modality encoder receives two gradients per step: one from the
//! joint (fused) loss and one from its own unimodal loss. This crate
//! provides the two-objective min-norm solver, three ways of combining the
//! pair (plain sum, conventional Pareto, MMPareto), a small late-fusion MLP
//! with exact per-loss gradients, a synthetic multimodal task, the training
//! loop, and diagnostics for gradient statistics and loss-landscape flatness.

pub mod data;
pub mod diag;
pub mod error;
pub mod experiment;
pub mod integrate;
pub mod model;
pub mod numerics;
pub mod pareto;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use experiment::ExperimentConfig;
pub use integrate::{CaseTag, IntegrationOutcome, Strategy, StrategyConfig};
pub use numerics::{Matrix, RealVec, RngStream};
pub use pareto::ParetoSolution;
