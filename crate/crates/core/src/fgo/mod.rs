//! Factor graph machinery: variables, factors, optimizer, marginalization and the window estimator.

pub mod factors;
pub mod global;
pub mod graph;
pub mod interp;
pub mod marginal;
pub mod state;
pub mod window;

pub use graph::{optimize, FactorFamily, FactorGraph, FgoError, OptimizeReport, OptimizerParams, Values, Var, VarKey};
pub use state::NavState;
