use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BoundaryMode, InterpScratch, LevelIndex, SparseGrid, MAX_LEVEL};
use crate::error::{DdsgError, Result};
use crate::evaluator::{evaluate_checked, Evaluator};
use crate::runtime::Runtime;

/// Construction parameters of a sparse grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Maximum refinement level ℓ; nodes satisfy `‖l‖₁ ≤ ℓ + n − 1`.
    pub max_level: u32,
    /// Surplus threshold ε_γ. Zero builds the full regular grid.
    pub threshold: f64,
    pub boundary: BoundaryMode,
}

impl GridOptions {
    pub fn regular(max_level: u32, boundary: BoundaryMode) -> Self {
        Self {
            max_level,
            threshold: 0.0,
            boundary,
        }
    }

    pub fn adaptive(max_level: u32, threshold: f64, boundary: BoundaryMode) -> Self {
        Self {
            max_level,
            threshold,
            boundary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LEVEL).contains(&self.max_level) {
            return Err(DdsgError::InvalidArgument(format!(
                "max_level must be in 1..={MAX_LEVEL}, got {}",
                self.max_level
            )));
        }
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return Err(DdsgError::InvalidArgument(format!(
                "surplus threshold must be finite and >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Builds a (possibly adaptive) sparse grid of `f`.
///
/// Nodes are inserted in rounds. Each round proposes the hierarchical
/// children of the previous round's significant nodes (`‖α‖∞ > ε_γ`), adds
/// any missing ancestors so the grid stays closed under the parent relation,
/// and inserts the batch in ascending level sum. A new node's surplus is its
/// function value minus the current interpolant at that node; with ancestor
/// closure and coarse-to-fine insertion this is exact hierarchization.
///
/// Function evaluations and surplus computations within one level sum run on
/// `rt`; all bookkeeping happens on the calling thread.
pub fn build<E: Evaluator + ?Sized>(f: &E, opts: &GridOptions, rt: &Runtime) -> Result<SparseGrid> {
    opts.validate()?;
    let n = f.in_dim();
    if n == 0 {
        return Err(DdsgError::InvalidArgument("sparse grid dimension must be >= 1".into()));
    }
    let cap = opts.max_level + n as u32 - 1;
    let mut grid = SparseGrid::empty(n, f.out_dim(), opts);

    let mut pending = insert_batch(&mut grid, f, vec![LevelIndex::root(n)], rt)?;
    loop {
        let mut proposals: BTreeSet<(u32, LevelIndex)> = BTreeSet::new();
        for &id in &pending {
            if !grid.is_significant(id) {
                continue;
            }
            let key = grid.key(id);
            if key.level_sum() >= cap {
                continue;
            }
            grid.mark_refined(id);
            for j in 0..n {
                for child in key.children_along(j) {
                    if !grid.contains(&child) {
                        proposals.insert((child.level_sum(), child));
                    }
                }
            }
        }
        if proposals.is_empty() {
            break;
        }
        // ancestor closure
        let mut stack: Vec<LevelIndex> = proposals.iter().map(|(_, k)| k.clone()).collect();
        while let Some(key) = stack.pop() {
            for parent in key.parents() {
                let entry = (parent.level_sum(), parent);
                if !grid.contains(&entry.1) && !proposals.contains(&entry) {
                    stack.push(entry.1.clone());
                    proposals.insert(entry);
                }
            }
        }
        pending.clear();
        let mut iter = proposals.into_iter().peekable();
        while let Some((sum, first)) = iter.next() {
            let mut batch = vec![first];
            while let Some((_, k)) = iter.next_if(|(s, _)| *s == sum) {
                batch.push(k);
            }
            pending.extend(insert_batch(&mut grid, f, batch, rt)?);
        }
    }
    Ok(grid)
}

/// Evaluates and hierarchizes a batch of nodes sharing one level sum.
/// Nodes of equal level sum vanish at each other's grid points, so the
/// whole batch can be hierarchized against the grid as it was before.
fn insert_batch<E: Evaluator + ?Sized>(
    grid: &mut SparseGrid,
    f: &E,
    batch: Vec<LevelIndex>,
    rt: &Runtime,
) -> Result<Vec<usize>> {
    let points: Vec<Vec<f64>> = batch.iter().map(LevelIndex::point).collect();
    let values = rt
        .try_map(&points, |_, x| evaluate_checked(f, x))
        .map_err(|fail| fail.error)?;
    let frozen: &SparseGrid = grid;
    let surpluses: Vec<Vec<f64>> = rt.map(&points, |i, x| {
        let mut current = vec![0.0; frozen.out_dim()];
        if !frozen.is_empty() {
            frozen.accumulate(x, 1.0, &mut current, &mut InterpScratch::default(), false);
        }
        values[i].iter().zip(&current).map(|(v, c)| v - c).collect()
    });
    let first = grid.len();
    for ((key, value), surplus) in batch.iter().zip(&values).zip(&surpluses) {
        grid.push_node(key, value, surplus);
    }
    Ok((first..grid.len()).collect())
}
