//! Dimension-decomposed adaptive sparse grids (DDSG) and a parallel
//! time-iteration solver for international real business cycle models.
//!
//! The crate is organised bottom-up:
//!
//! - [`sparse_grid`]: piecewise-linear hierarchical sparse grids on `[0,1]^n`
//!   with surplus-driven adaptive refinement, interpolation and quadrature.
//! - [`hdmr`]: anchored (cut-)HDMR decomposition whose component functions
//!   are sparse grids, with expansion-order and active-dimension adaptivity.
//! - [`ddsg_eval`]: the flattened interpolation kernel `f(x) ≈ a(x)ᵀ b`.
//! - [`irbc`]: smooth and irreversible-investment IRBC model equations.
//! - [`solver`]: per-point Newton / semismooth Newton solves, the time
//!   iteration loop and Euler-equation errors.
//! - [`runtime`]: the thread pool behind every parallel loop. Building
//!   without the default `parallel` feature swaps it for a sequential
//!   executor with identical results.

pub mod ddsg_eval;
pub mod error;
pub mod evaluator;
pub mod hdmr;
pub mod irbc;
pub mod numerics;
pub mod runtime;
pub mod solver;
pub mod sparse_grid;

#[cfg(test)]
mod properties;

pub use error::{DdsgError, Result};
pub use evaluator::{Evaluator, FnEvaluator};
pub use runtime::Runtime;
