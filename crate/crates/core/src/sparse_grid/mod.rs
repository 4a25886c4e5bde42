//! Piecewise-linear hierarchical sparse grids on `[0,1]^n`.
//!
//! A [`SparseGrid`] stores the surpluses of a vector-valued function on a set
//! of hierarchical nodes. Nodes are grouped into subspaces (one per level
//! vector). Each subspace holds a lookup table keyed by the packed index
//! offset, so interpolation touches at most one node per subspace: the one
//! whose support contains the query.

mod basis;
mod build;
mod io;
mod key;

use std::collections::HashMap;

pub use basis::{basis_1d, BoundaryMode, MAX_LEVEL};
pub(crate) use basis::{containing_index, value as basis_value};
pub use build::{build, GridOptions};
pub use io::{NodeDocument, SparseGridDocument, SPARSE_GRID_SCHEMA_VERSION};
pub use key::LevelIndex;

use crate::error::{DdsgError, Result};

/// Tensor-product basis function of `key` at `x`.
pub fn basis_nd(key: &LevelIndex, x: &[f64], mode: BoundaryMode) -> Result<f64> {
    if x.len() != key.dim() {
        return Err(DdsgError::DimensionMismatch {
            expected: key.dim(),
            got: x.len(),
        });
    }
    let mut prod = 1.0;
    for ((&l, &i), &xj) in key.levels().iter().zip(key.indices()).zip(x) {
        prod *= basis_1d(l, i, xj, mode)?;
        if prod == 0.0 {
            return Ok(0.0);
        }
    }
    Ok(prod)
}

/// Number of nodes of the non-adaptive grid with `‖l‖₁ ≤ max_level + dim − 1`.
pub fn regular_node_count(dim: usize, max_level: u32) -> Option<u64> {
    if dim == 0 {
        return Some(1);
    }
    let n = dim as u64;
    let mut total: u64 = 0;
    // level vectors with sum s: C(s-1, n-1), each holding 2^(s-n) nodes
    for extra in 0..u64::from(max_level) {
        let s = n + extra;
        let subspaces = crate::numerics::binomial(s - 1, n - 1)?;
        let nodes = subspaces.checked_mul(1u64.checked_shl(extra as u32)?)?;
        total = total.checked_add(nodes)?;
    }
    Some(total)
}

/// Borrowed view of one stored node.
#[derive(Debug, Clone)]
pub struct GridNode<'a> {
    pub key: LevelIndex,
    pub surplus: &'a [f64],
    pub value: &'a [f64],
    pub refined: bool,
}

const DENSE_BITS: u32 = 16;
const EMPTY: u32 = u32::MAX;

#[derive(Debug, Clone)]
enum Table {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

impl Table {
    fn new(bits: u32) -> Self {
        if bits <= DENSE_BITS {
            Table::Dense(vec![EMPTY; 1usize << bits])
        } else {
            Table::Sparse(HashMap::new())
        }
    }

    #[inline]
    fn get(&self, pos: u64) -> Option<u32> {
        match self {
            Table::Dense(v) => {
                let id = v[pos as usize];
                (id != EMPTY).then_some(id)
            }
            Table::Sparse(m) => m.get(&pos).copied(),
        }
    }

    fn insert(&mut self, pos: u64, id: u32) {
        match self {
            Table::Dense(v) => v[pos as usize] = id,
            Table::Sparse(m) => {
                m.insert(pos, id);
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Subspace {
    table: Table,
}

/// Reusable per-query buffers for interpolation.
#[derive(Debug, Default, Clone)]
pub struct InterpScratch {
    idx: Vec<u32>,
    val: Vec<f64>,
    slope: Vec<f64>,
}

/// Hierarchical surpluses of an `out_dim`-valued function on `[0,1]^dim`.
#[derive(Debug, Clone)]
pub struct SparseGrid {
    dim: usize,
    out_dim: usize,
    max_level: u32,
    boundary: BoundaryMode,
    threshold: f64,
    // node-major flattened storage
    levels: Vec<u32>,
    indices: Vec<u32>,
    surplus: Vec<f64>,
    values: Vec<f64>,
    refined: Vec<bool>,
    // per subspace: level vector (dim entries) and bit shifts (dim entries)
    sub_levels: Vec<u32>,
    sub_shifts: Vec<u32>,
    subspaces: Vec<Subspace>,
    sub_lookup: HashMap<Vec<u32>, usize>,
}

impl SparseGrid {
    pub(crate) fn empty(dim: usize, out_dim: usize, opts: &GridOptions) -> Self {
        Self {
            dim,
            out_dim,
            max_level: opts.max_level,
            boundary: opts.boundary,
            threshold: opts.threshold,
            levels: Vec::new(),
            indices: Vec::new(),
            surplus: Vec::new(),
            values: Vec::new(),
            refined: Vec::new(),
            sub_levels: Vec::new(),
            sub_shifts: Vec::new(),
            subspaces: Vec::new(),
            sub_lookup: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.refined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refined.is_empty()
    }

    pub fn subspace_count(&self) -> usize {
        self.subspaces.len()
    }

    pub fn key(&self, id: usize) -> LevelIndex {
        let r = id * self.dim..(id + 1) * self.dim;
        LevelIndex::from_parts_unchecked(self.levels[r.clone()].to_vec(), self.indices[r].to_vec())
    }

    pub fn surplus(&self, id: usize) -> &[f64] {
        &self.surplus[id * self.out_dim..(id + 1) * self.out_dim]
    }

    /// Function value recorded when the node was inserted.
    pub fn value(&self, id: usize) -> &[f64] {
        &self.values[id * self.out_dim..(id + 1) * self.out_dim]
    }

    pub fn node(&self, id: usize) -> GridNode<'_> {
        GridNode {
            key: self.key(id),
            surplus: self.surplus(id),
            value: self.value(id),
            refined: self.refined[id],
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = GridNode<'_>> + '_ {
        (0..self.len()).map(move |id| self.node(id))
    }

    pub fn contains(&self, key: &LevelIndex) -> bool {
        self.find(key.levels(), key.indices()).is_some()
    }

    fn find(&self, levels: &[u32], indices: &[u32]) -> Option<usize> {
        let s = *self.sub_lookup.get(levels)?;
        let shifts = &self.sub_shifts[s * self.dim..(s + 1) * self.dim];
        let pos = position(indices, shifts);
        self.subspaces[s].table.get(pos).map(|id| id as usize)
    }

    pub(crate) fn push_node(&mut self, key: &LevelIndex, value: &[f64], surplus: &[f64]) {
        debug_assert_eq!(value.len(), self.out_dim);
        let id = self.len() as u32;
        let s = match self.sub_lookup.get(key.levels()) {
            Some(&s) => s,
            None => {
                let s = self.subspaces.len();
                let mut shift = 0;
                for &l in key.levels() {
                    self.sub_shifts.push(shift);
                    shift += l - 1;
                }
                self.sub_levels.extend_from_slice(key.levels());
                self.subspaces.push(Subspace { table: Table::new(shift) });
                self.sub_lookup.insert(key.levels().to_vec(), s);
                s
            }
        };
        let pos = position(key.indices(), &self.sub_shifts[s * self.dim..(s + 1) * self.dim]);
        self.subspaces[s].table.insert(pos, id);
        self.levels.extend_from_slice(key.levels());
        self.indices.extend_from_slice(key.indices());
        self.values.extend_from_slice(value);
        self.surplus.extend_from_slice(surplus);
        self.refined.push(false);
    }

    pub(crate) fn mark_refined(&mut self, id: usize) {
        self.refined[id] = true;
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(DdsgError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DdsgError::OutOfDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// Interpolated value at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.out_dim];
        self.interpolate_into(x, &mut out, &mut InterpScratch::default())?;
        Ok(out)
    }

    /// Interpolates into `out` (overwritten), reusing `scratch`.
    pub fn interpolate_into(&self, x: &[f64], out: &mut [f64], scratch: &mut InterpScratch) -> Result<()> {
        self.check_point(x)?;
        self.accumulate(x, 1.0, out, scratch, false);
        Ok(())
    }

    /// Adds `weight · I f(x)` to `out` without domain checks.
    pub(crate) fn accumulate(&self, x: &[f64], weight: f64, out: &mut [f64], scratch: &mut InterpScratch, keep: bool) {
        if !keep {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
        let lmax = self.max_level as usize;
        self.fill_scratch(x, scratch, false);
        let m = self.out_dim;
        let n = self.dim;
        for (s, sub) in self.subspaces.iter().enumerate() {
            let levels = &self.sub_levels[s * n..(s + 1) * n];
            let shifts = &self.sub_shifts[s * n..(s + 1) * n];
            let mut phi = weight;
            let mut pos = 0u64;
            for j in 0..n {
                let c = j * lmax + levels[j] as usize - 1;
                let v = scratch.val[c];
                if v == 0.0 {
                    phi = 0.0;
                    break;
                }
                phi *= v;
                pos |= u64::from(scratch.idx[c] >> 1) << shifts[j];
            }
            if phi == 0.0 {
                continue;
            }
            if let Some(id) = sub.table.get(pos) {
                let a = &self.surplus[id as usize * m..(id as usize + 1) * m];
                for (o, &al) in out.iter_mut().zip(a) {
                    *o += al * phi;
                }
            }
        }
    }

    /// Adds `I f(x_dims)` to `out` using precomputed 1-d basis tables of a
    /// larger query: entry `dims[j] * stride + l − 1` of `idx`/`val` holds the
    /// containing index and basis value of local dimension `j` at level `l`.
    /// `surplus` replaces the grid's own surplus storage (same layout).
    pub(crate) fn accumulate_mapped(
        &self,
        dims: &[usize],
        stride: usize,
        idx: &[u32],
        val: &[f64],
        surplus: &[f64],
        out: &mut [f64],
    ) {
        let (m, n) = (self.out_dim, self.dim);
        for (s, sub) in self.subspaces.iter().enumerate() {
            let levels = &self.sub_levels[s * n..(s + 1) * n];
            let shifts = &self.sub_shifts[s * n..(s + 1) * n];
            let mut phi = 1.0;
            let mut pos = 0u64;
            for j in 0..n {
                let c = dims[j] * stride + levels[j] as usize - 1;
                phi *= val[c];
                pos |= u64::from(idx[c] >> 1) << shifts[j];
            }
            if phi == 0.0 {
                continue;
            }
            if let Some(id) = sub.table.get(pos) {
                let a = &surplus[id as usize * m..(id as usize + 1) * m];
                for (o, &al) in out.iter_mut().zip(a) {
                    *o += al * phi;
                }
            }
        }
    }

    /// Flattened node-major surplus storage.
    pub(crate) fn surplus_block(&self) -> &[f64] {
        &self.surplus
    }

    /// Interpolated value and gradient; `grad[o * dim + j] = ∂f_o/∂x_j`.
    pub fn interpolate_with_gradient(
        &self,
        x: &[f64],
        out: &mut [f64],
        grad: &mut [f64],
        scratch: &mut InterpScratch,
    ) -> Result<()> {
        self.check_point(x)?;
        out.iter_mut().for_each(|o| *o = 0.0);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lmax = self.max_level as usize;
        self.fill_scratch(x, scratch, true);
        let (m, n) = (self.out_dim, self.dim);
        let mut factors = vec![0.0; n];
        let mut slopes = vec![0.0; n];
        for (s, sub) in self.subspaces.iter().enumerate() {
            let levels = &self.sub_levels[s * n..(s + 1) * n];
            let shifts = &self.sub_shifts[s * n..(s + 1) * n];
            let mut pos = 0u64;
            let mut zeros = 0;
            for j in 0..n {
                let c = j * lmax + levels[j] as usize - 1;
                factors[j] = scratch.val[c];
                slopes[j] = scratch.slope[c];
                if factors[j] == 0.0 {
                    zeros += 1;
                }
                pos |= u64::from(scratch.idx[c] >> 1) << shifts[j];
            }
            // zero factors carry zero slope, so the whole term vanishes
            if zeros > 0 {
                continue;
            }
            let Some(id) = sub.table.get(pos) else { continue };
            let a = &self.surplus[id as usize * m..(id as usize + 1) * m];
            let phi: f64 = factors.iter().product();
            for j in 0..n {
                let mut d = slopes[j];
                if d == 0.0 {
                    continue;
                }
                for (k, &f) in factors.iter().enumerate() {
                    if k != j {
                        d *= f;
                    }
                }
                if d == 0.0 {
                    continue;
                }
                for o in 0..m {
                    grad[o * n + j] += a[o] * d;
                }
            }
            if phi != 0.0 {
                for (o, &al) in out.iter_mut().zip(a) {
                    *o += al * phi;
                }
            }
        }
        Ok(())
    }

    fn fill_scratch(&self, x: &[f64], scratch: &mut InterpScratch, slopes: bool) {
        let lmax = self.max_level as usize;
        let len = self.dim * lmax;
        scratch.idx.resize(len, 0);
        scratch.val.resize(len, 0.0);
        if slopes {
            scratch.slope.resize(len, 0.0);
        }
        for (j, &xj) in x.iter().enumerate() {
            for l in 1..=self.max_level {
                let c = j * lmax + l as usize - 1;
                let i = basis::containing_index(l, xj);
                scratch.idx[c] = i;
                if slopes {
                    let (v, d) = basis::value_and_slope(l, i, xj, self.boundary);
                    scratch.val[c] = v;
                    scratch.slope[c] = d;
                } else {
                    scratch.val[c] = basis::value(l, i, xj, self.boundary);
                }
            }
        }
    }

    /// Integral of the interpolant over `[0,1]^dim`.
    pub fn quadrature(&self) -> Vec<f64> {
        let (m, n) = (self.out_dim, self.dim);
        let mut q = vec![0.0; m];
        for id in 0..self.len() {
            let mut w = 1.0;
            for j in 0..n {
                w *= basis::integral(self.levels[id * n + j], self.indices[id * n + j], self.boundary);
            }
            for (qo, &a) in q.iter_mut().zip(self.surplus(id)) {
                *qo += a * w;
            }
        }
        q
    }

    pub(crate) fn is_significant(&self, id: usize) -> bool {
        if self.threshold == 0.0 {
            return true;
        }
        crate::numerics::norm_inf(self.surplus(id)) > self.threshold
    }
}

#[inline]
fn position(indices: &[u32], shifts: &[u32]) -> u64 {
    indices
        .iter()
        .zip(shifts)
        .fold(0u64, |pos, (&i, &s)| pos | (u64::from(i >> 1) << s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nd_examples() {
        let z = BoundaryMode::ZeroBoundary;
        let k = LevelIndex::new(vec![1, 1], vec![1, 1]).unwrap();
        assert_eq!(basis_nd(&k, &[0.5, 0.5], z).unwrap(), 1.0);
        let k = LevelIndex::new(vec![1, 2], vec![1, 1]).unwrap();
        assert_eq!(basis_nd(&k, &[0.5, 0.0], z).unwrap(), 0.0);
        let k = LevelIndex::new(vec![2, 2], vec![1, 3]).unwrap();
        assert!((basis_nd(&k, &[0.25, 0.6], z).unwrap() - 0.4).abs() < 1e-15);
        assert!(basis_nd(&k, &[0.25], z).is_err());
    }

    #[test]
    fn regular_counts() {
        assert_eq!(regular_node_count(1, 3), Some(7));
        assert_eq!(regular_node_count(2, 2), Some(5));
        assert_eq!(regular_node_count(2, 4), Some(49));
    }
}
