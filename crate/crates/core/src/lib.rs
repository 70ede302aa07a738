//! Bias-adjusted Bayesian updating and decision analysis for reported
//! clinical studies.
//!
//! A study report is paired with explicit bias models: parametric
//! transforms that carry the population event probability through
//! selection, protocol, implementation, measurement and reporting. The
//! engine puts priors on the bias parameters, updates everything jointly on
//! a grid, integrates the biases out, and feeds the resulting patient-level
//! distribution into an expected-utility decision.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decision;
pub mod grid;
pub mod inference;
pub mod interface;
pub mod kb;
pub mod model;
pub mod numeric;

pub use grid::{Axis, GridError, ParamGrid};
pub use model::{BetaShape, ParamPrior, PipelineModel, Probability, StudyReport, ValidatedStudy};
