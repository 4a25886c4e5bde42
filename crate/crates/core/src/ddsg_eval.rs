//! Vectorized evaluation of a decomposition: `f(x) ≈ a(x)ᵀ b`.
//!
//! Every accepted cut interpolant occupies one slot and is interpolated at
//! most once per query; the telescoping signs are folded into the integer
//! coefficients `b`. Slots with `b_i = 0` stay in the structure for
//! quadrature consistency but are skipped during evaluation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{DdsgError, Result};
use crate::evaluator::Evaluator;
use crate::hdmr::{ComponentIndex, DdsgFunction};
use crate::numerics::pairwise_sum;
use crate::runtime::Runtime;
use crate::sparse_grid::{BoundaryMode, InterpScratch, SparseGrid};

#[derive(Debug, Clone)]
struct Slot {
    index: ComponentIndex,
    grid: Option<Arc<SparseGrid>>,
    b: i64,
    surplus_offset: usize,
}

/// Compiled, immutable form of a [`DdsgFunction`].
#[derive(Debug)]
pub struct VectorizedDdsg {
    dim: usize,
    out_dim: usize,
    anchor_value: Vec<f64>,
    slots: Vec<Slot>,
    active: Vec<usize>,
    surplus: Vec<f64>,
    boundary: BoundaryMode,
    stride: usize,
    interpolations: AtomicU64,
}

/// Reusable buffers for [`VectorizedDdsg::evaluate_into`].
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    idx: Vec<u32>,
    val: Vec<f64>,
    terms: Vec<f64>,
    part: Vec<f64>,
    sub_x: Vec<f64>,
    sub_grad: Vec<f64>,
    interp: InterpScratch,
}

impl Clone for VectorizedDdsg {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            out_dim: self.out_dim,
            anchor_value: self.anchor_value.clone(),
            slots: self.slots.clone(),
            active: self.active.clone(),
            surplus: self.surplus.clone(),
            boundary: self.boundary,
            stride: self.stride,
            interpolations: AtomicU64::new(0),
        }
    }
}

impl VectorizedDdsg {
    pub fn compile(ddsg: &DdsgFunction) -> Result<Self> {
        let coeffs = ddsg.coefficients();
        let mut slots = Vec::with_capacity(coeffs.len());
        let mut surplus = Vec::new();
        let mut boundary = None;
        let mut stride = 1usize;
        for (u, &b) in coeffs {
            let grid = if u.is_empty() {
                None
            } else {
                let g = ddsg
                    .grid(u)
                    .ok_or_else(|| DdsgError::InconsistentFamily(format!("no grid stored for {u}")))?;
                if *boundary.get_or_insert(g.boundary()) != g.boundary() {
                    return Err(DdsgError::InconsistentFamily("mixed boundary modes".into()));
                }
                stride = stride.max(g.max_level() as usize);
                Some(Arc::clone(g))
            };
            let surplus_offset = surplus.len();
            if let Some(g) = &grid {
                surplus.extend_from_slice(g.surplus_block());
            }
            slots.push(Slot {
                index: u.clone(),
                grid,
                b,
                surplus_offset,
            });
        }
        if slots.first().map(|s| !s.index.is_empty()).unwrap_or(true) {
            return Err(DdsgError::InconsistentFamily("the empty component is missing".into()));
        }
        let active = (0..slots.len()).filter(|&i| slots[i].b != 0).collect();
        Ok(Self {
            dim: ddsg.dim(),
            out_dim: ddsg.out_dim(),
            anchor_value: ddsg.anchor().value.clone(),
            slots,
            active,
            surplus,
            boundary: boundary.unwrap_or_default(),
            stride,
            interpolations: AtomicU64::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Number of slots, the empty component included.
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Slots with a nonzero coefficient.
    pub fn active_slot_count(&self) -> usize {
        self.active.len()
    }

    /// `(index, b)` in slot order.
    pub fn coefficients(&self) -> impl Iterator<Item = (&ComponentIndex, i64)> {
        self.slots.iter().map(|s| (&s.index, s.b))
    }

    /// Total cut-interpolant evaluations since compile or the last reset
    /// (the constant slot counts as one).
    pub fn interpolation_count(&self) -> u64 {
        self.interpolations.load(Ordering::Relaxed)
    }

    pub fn reset_interpolation_count(&self) {
        self.interpolations.store(0, Ordering::Relaxed);
    }

    /// `Σ_i b_i Q(grid_i)`.
    pub fn quadrature(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.out_dim];
        for s in &self.slots {
            let qi = match &s.grid {
                Some(g) => g.quadrature(),
                None => self.anchor_value.clone(),
            };
            for (a, v) in q.iter_mut().zip(qi) {
                *a += s.b as f64 * v;
            }
        }
        q
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

    fn fill_basis(&self, x: &[f64], sc: &mut EvalScratch) {
        let len = self.dim * self.stride;
        sc.idx.resize(len, 0);
        sc.val.resize(len, 0.0);
        for (j, &xj) in x.iter().enumerate() {
            for l in 1..=self.stride as u32 {
                let c = j * self.stride + l as usize - 1;
                let i = crate::sparse_grid::containing_index(l, xj);
                sc.idx[c] = i;
                sc.val[c] = crate::sparse_grid::basis_value(l, i, xj, self.boundary);
            }
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.out_dim];
        self.evaluate_into(x, &mut out, &mut EvalScratch::default())?;
        Ok(out)
    }

    /// Overwrites `out` with the approximation at `x`.
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64], sc: &mut EvalScratch) -> Result<()> {
        self.check_point(x)?;
        self.fill_basis(x, sc);
        let (m, na) = (self.out_dim, self.active.len());
        sc.terms.resize(m * na, 0.0);
        sc.part.resize(m, 0.0);
        for (k, &si) in self.active.iter().enumerate() {
            let slot = &self.slots[si];
            match &slot.grid {
                None => sc.part.copy_from_slice(&self.anchor_value),
                Some(g) => {
                    sc.part.iter_mut().for_each(|p| *p = 0.0);
                    let block = &self.surplus[slot.surplus_offset..slot.surplus_offset + g.len() * m];
                    g.accumulate_mapped(slot.index.dims(), self.stride, &sc.idx, &sc.val, block, &mut sc.part);
                }
            }
            let b = slot.b as f64;
            for o in 0..m {
                sc.terms[o * na + k] = b * sc.part[o];
            }
        }
        for (o, v) in out.iter_mut().enumerate() {
            *v = pairwise_sum(&sc.terms[o * na..(o + 1) * na]);
        }
        self.interpolations.fetch_add(na as u64, Ordering::Relaxed);
        Ok(())
    }

    /// Value and gradient, `grad[o * dim + j] = ∂f_o/∂x_j` (right derivatives
    /// at kinks).
    pub fn evaluate_with_gradient(
        &self,
        x: &[f64],
        out: &mut [f64],
        grad: &mut [f64],
        sc: &mut EvalScratch,
    ) -> Result<()> {
        self.check_point(x)?;
        let (m, d) = (self.out_dim, self.dim);
        out.iter_mut().for_each(|v| *v = 0.0);
        grad.iter_mut().for_each(|v| *v = 0.0);
        sc.part.resize(m, 0.0);
        for &si in &self.active {
            let slot = &self.slots[si];
            let b = slot.b as f64;
            let Some(g) = &slot.grid else {
                for (o, a) in out.iter_mut().zip(&self.anchor_value) {
                    *o += b * a;
                }
                continue;
            };
            let dims = slot.index.dims();
            let k = dims.len();
            sc.sub_x.clear();
            sc.sub_x.extend(dims.iter().map(|&j| x[j]));
            sc.sub_grad.resize(m * k, 0.0);
            g.interpolate_with_gradient(&sc.sub_x, &mut sc.part, &mut sc.sub_grad, &mut sc.interp)?;
            for o in 0..m {
                out[o] += b * sc.part[o];
                for (jl, &j) in dims.iter().enumerate() {
                    grad[o * d + j] += b * sc.sub_grad[o * k + jl];
                }
            }
        }
        self.interpolations.fetch_add(self.active.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    /// Evaluates row-major points `xs` (`dim` entries each) and returns
    /// row-major outputs. Chunks run on the fine layer of `rt`.
    pub fn evaluate_batch(&self, xs: &[f64], rt: &Runtime) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        if self.dim == 0 || xs.len() % self.dim != 0 {
            return Err(DdsgError::DimensionMismatch {
                expected: self.dim,
                got: xs.len(),
            });
        }
        let n = xs.len() / self.dim;
        let chunks = n.div_ceil(CHUNK);
        let parts = rt.map_range(chunks, |c| -> Result<Vec<f64>> {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut sc = EvalScratch::default();
            let mut res = vec![0.0; (hi - lo) * self.out_dim];
            for (p, out) in (lo..hi).zip(res.chunks_mut(self.out_dim)) {
                self.evaluate_into(&xs[p * self.dim..(p + 1) * self.dim], out, &mut sc)?;
            }
            Ok(res)
        });
        let mut all = Vec::with_capacity(n * self.out_dim);
        for p in parts {
            all.extend(p?);
        }
        Ok(all)
    }
}

impl Evaluator for VectorizedDdsg {
    fn in_dim(&self) -> usize {
        self.dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.evaluate_into(x, out, &mut EvalScratch::default())
    }
}

/// Direct nested evaluation `Σ_u Σ_{v ⊆ u} (−1)^{|u|−|v|} I f(x̄ \ x_v)`,
/// interpolating every cut once per occurrence. Used as a reference.
pub struct NaiveDdsg<'a> {
    ddsg: &'a DdsgFunction,
    accepted: Vec<ComponentIndex>,
    interpolations: AtomicU64,
}

impl<'a> NaiveDdsg<'a> {
    pub fn new(ddsg: &'a DdsgFunction) -> Self {
        Self {
            ddsg,
            accepted: ddsg.accepted().cloned().collect(),
            interpolations: AtomicU64::new(0),
        }
    }

    pub fn interpolation_count(&self) -> u64 {
        self.interpolations.load(Ordering::Relaxed)
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64], scratch: &mut InterpScratch) -> Result<()> {
        let m = self.ddsg.out_dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut part = vec![0.0; m];
        let mut sub_x = Vec::with_capacity(x.len());
        let mut calls = 0u64;
        for u in &self.accepted {
            for v in u.subsets() {
                let sign = if (u.order() - v.order()) % 2 == 0 { 1.0 } else { -1.0 };
                if v.is_empty() {
                    part.copy_from_slice(&self.ddsg.anchor().value);
                } else {
                    let g = self
                        .ddsg
                        .grid(&v)
                        .ok_or_else(|| DdsgError::InconsistentFamily(format!("no grid stored for {v}")))?;
                    sub_x.clear();
                    sub_x.extend(v.dims().iter().map(|&j| x[j]));
                    g.interpolate_into(&sub_x, &mut part, scratch)?;
                }
                calls += 1;
                for (o, p) in out.iter_mut().zip(&part) {
                    *o += sign * p;
                }
            }
        }
        self.interpolations.fetch_add(calls, Ordering::Relaxed);
        Ok(())
    }
}

impl Evaluator for NaiveDdsg<'_> {
    fn in_dim(&self) -> usize {
        self.ddsg.dim()
    }
    fn out_dim(&self) -> usize {
        self.ddsg.out_dim()
    }
    fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.ddsg.dim() {
            return Err(DdsgError::DimensionMismatch {
                expected: self.ddsg.dim(),
                got: x.len(),
            });
        }
        self.evaluate_into(x, out, &mut InterpScratch::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::scalar_fn;
    use crate::hdmr::{decompose, AnchorPoint, DecomposeOptions};
    use crate::sparse_grid::GridOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(d: usize, k: usize, f: impl Fn(&[f64]) -> f64 + Sync) -> DdsgFunction {
        let f = scalar_fn(d, f);
        let anchor = AnchorPoint::at(&f, vec![0.3; d]).unwrap();
        let opts = DecomposeOptions::new(k, 0.0, GridOptions::regular(3, BoundaryMode::ModifiedLinear));
        decompose(&f, anchor, &opts, &Runtime::sequential()).unwrap()
    }

    fn b_map(v: &VectorizedDdsg) -> Vec<(String, i64)> {
        v.coefficients().map(|(u, b)| (u.to_string(), b)).collect()
    }

    #[test]
    fn coefficient_examples() {
        let v = VectorizedDdsg::compile(&build(2, 1, |x| x[0] * x[1] + 1.0)).unwrap();
        assert_eq!(b_map(&v), [("{}".into(), -1), ("{0}".into(), 1), ("{1}".into(), 1)]);
        let v = VectorizedDdsg::compile(&build(3, 1, |x| x[0] * x[1] * x[2] + 1.0)).unwrap();
        assert_eq!(v.coefficients().next().unwrap().1, -2);
        let v = VectorizedDdsg::compile(&build(2, 2, |x| x[0] * x[1] + 1.0)).unwrap();
        assert_eq!(
            b_map(&v),
            [("{}".into(), 0), ("{0}".into(), 0), ("{1}".into(), 0), ("{0,1}".into(), 1)]
        );
        assert_eq!(v.active_slot_count(), 1);
    }

    #[test]
    fn matches_naive_and_counts_calls() {
        let ddsg = build(4, 2, |x| (x[0] + 2.0 * x[1] * x[2]).sin() + x[3] * x[0]);
        let v = VectorizedDdsg::compile(&ddsg).unwrap();
        let naive = NaiveDdsg::new(&ddsg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
            let a = v.evaluate(&x).unwrap();
            let mut b = [0.0];
            naive.evaluate(&x, &mut b).unwrap();
            assert!((a[0] - b[0]).abs() <= 1e-12);
        }
        assert_eq!(v.interpolation_count(), 200 * v.active_slot_count() as u64);
        let q = v.quadrature();
        assert!((q[0] - ddsg.quadrature()[0]).abs() < 1e-12);
    }

    #[test]
    fn constant_function_everywhere() {
        let v = VectorizedDdsg::compile(&build(3, 2, |_| 2.5)).unwrap();
        for x in [[0.0, 0.0, 0.0], [1.0, 0.2, 0.7], [0.5, 0.5, 0.5]] {
            assert!((v.evaluate(&x).unwrap()[0] - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_equals_loop_and_permutes() {
        let v = VectorizedDdsg::compile(&build(3, 2, |x| x[0] * x[1].exp() + x[2])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..3 * 600).map(|_| rng.gen()).collect();
        let rt = Runtime::new(3).unwrap();
        let batch = v.evaluate_batch(&xs, &rt).unwrap();
        for p in 0..600 {
            assert_eq!(batch[p].to_bits(), v.evaluate(&xs[3 * p..3 * p + 3]).unwrap()[0].to_bits());
        }
        let single = v.evaluate_batch(&xs[..3], &rt).unwrap();
        assert_eq!(single[0], batch[0]);
        assert!(v.evaluate_batch(&xs[..4], &rt).is_err());
        assert!(matches!(v.evaluate(&[0.1, 1.2, 0.0]), Err(DdsgError::OutOfDomain { .. })));
    }

    #[test]
    fn gradient_matches_differences() {
        let v = VectorizedDdsg::compile(&build(3, 2, |x| x[0] * x[1] + (x[2] * 2.0).cos())).unwrap();
        let x = [0.33, 0.61, 0.47];
        let (mut out, mut grad) = (vec![0.0], vec![0.0; 3]);
        v.evaluate_with_gradient(&x, &mut out, &mut grad, &mut EvalScratch::default()).unwrap();
        assert!((out[0] - v.evaluate(&x).unwrap()[0]).abs() < 1e-13);
        for j in 0..3 {
            let mut xp = x;
            xp[j] += 1e-7;
            let fd = (v.evaluate(&xp).unwrap()[0] - out[0]) / 1e-7;
            assert!((fd - grad[j]).abs() < 1e-5, "{j}: {fd} vs {}", grad[j]);
        }
    }
}
