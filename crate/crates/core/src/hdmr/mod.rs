//! Anchored (cut-)HDMR decomposition with sparse-grid component functions.
//!
//! A function on `[0,1]^d` is written as the telescoping sum
//! `f(x) ≈ Σ_{|u| ≤ k_max} Σ_{v ⊆ u} (−1)^{|u|−|v|} I f(x̄ \ x_v)`, where
//! `I f(x̄ \ x_v)` is a `|v|`-dimensional sparse grid of `f` restricted to the
//! cut through the anchor `x̄`. Component indices are zero-based.

mod anchor;
mod component;
mod decompose;
mod io;

pub use anchor::{cut_evaluator, select_anchor, AnchorPoint, CutEvaluator, DEFAULT_ANCHOR_SAMPLES};
pub use component::{
    candidates, check_downward_closed, combination_coefficients, truncated_family, ComponentIndex,
};
pub use decompose::{decompose, eta, expansion_rho, grid_count, DdsgFunction, DecomposeOptions, OrderSummary};
pub use io::{ComponentDocument, DdsgDocument, DDSG_SCHEMA_VERSION};

use crate::error::Result;
use crate::evaluator::Evaluator;
use std::collections::BTreeMap;

/// Evaluates the cut expansion with exact function values on the cuts
/// (no sparse grids): `Σ_i b_i f(x̄ \ x_i)`.
pub fn exact_cut_evaluate<E: Evaluator + ?Sized>(
    f: &E,
    anchor: &AnchorPoint,
    coeffs: &BTreeMap<ComponentIndex, i64>,
    x: &[f64],
) -> Result<Vec<f64>> {
    let m = f.out_dim();
    let mut acc = vec![0.0; m];
    let mut y = anchor.coords.clone();
    let mut out = vec![0.0; m];
    for (u, &b) in coeffs {
        if b == 0 {
            continue;
        }
        y.copy_from_slice(&anchor.coords);
        for &j in u.dims() {
            y[j] = x[j];
        }
        f.evaluate(&y, &mut out)?;
        for (a, o) in acc.iter_mut().zip(&out) {
            *a += b as f64 * o;
        }
    }
    Ok(acc)
}
