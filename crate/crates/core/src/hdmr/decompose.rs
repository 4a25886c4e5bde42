use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::anchor::{cut_evaluator, AnchorPoint};
use super::component::{candidates, combination_coefficients, ComponentIndex};
use crate::error::{DdsgError, Result};
use crate::evaluator::Evaluator;
use crate::numerics::norm2;
use crate::runtime::Runtime;
use crate::sparse_grid::{build, regular_node_count, GridOptions, SparseGrid};

/// Parameters of the adaptive decomposition (`DD^{ε_η}_{k_max} SG^{ε_γ}_ℓ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub k_max: usize,
    /// Expansion threshold ε_ρ: stop once ρ < ε_ρ.
    pub eps_rho: f64,
    /// Active-dimension threshold ε_η: components of order ≥ 2 with η < ε_η
    /// are rejected together with all their supersets.
    pub eps_eta: f64,
    pub grid: GridOptions,
}

impl DecomposeOptions {
    /// `eps_rho` defaults to `eps_eta`.
    pub fn new(k_max: usize, eps_eta: f64, grid: GridOptions) -> Self {
        Self {
            k_max,
            eps_rho: eps_eta,
            eps_eta,
            grid,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k_max == 0 || self.k_max > d {
            return Err(DdsgError::InvalidArgument(format!(
                "k_max must be in 1..={d}, got {}",
                self.k_max
            )));
        }
        for (name, v) in [("eps_rho", self.eps_rho), ("eps_eta", self.eps_eta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(DdsgError::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        self.grid.validate()
    }
}

/// Bookkeeping of one expansion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub order: usize,
    pub accepted: Vec<ComponentIndex>,
    pub rejected: Vec<ComponentIndex>,
    /// η for every component built at this order (empty for order 1).
    pub eta: Vec<(ComponentIndex, f64)>,
    /// `None` when the denominator vanished and expansion continued.
    pub rho: Option<f64>,
    /// Grid points of the accepted components of this order.
    pub grid_points: usize,
}

/// A finalized cut-HDMR expansion whose components are sparse grids.
#[derive(Debug, Clone)]
pub struct DdsgFunction {
    pub(crate) dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) anchor: AnchorPoint,
    pub(crate) options: DecomposeOptions,
    pub(crate) grids: BTreeMap<ComponentIndex, Arc<SparseGrid>>,
    pub(crate) rejected: BTreeSet<ComponentIndex>,
    pub(crate) cut_quadratures: BTreeMap<ComponentIndex, Vec<f64>>,
    pub(crate) component_quadratures: BTreeMap<ComponentIndex, Vec<f64>>,
    pub(crate) coeffs: BTreeMap<ComponentIndex, i64>,
    pub(crate) orders: Vec<OrderSummary>,
}

impl DdsgFunction {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn anchor(&self) -> &AnchorPoint {
        &self.anchor
    }

    pub fn options(&self) -> &DecomposeOptions {
        &self.options
    }

    /// Accepted components, the empty one included, in slot order.
    pub fn accepted(&self) -> impl Iterator<Item = &ComponentIndex> {
        std::iter::once(self.coeffs.keys().next().expect("empty component always present"))
            .chain(self.grids.keys())
    }

    pub fn accepted_set(&self) -> BTreeSet<ComponentIndex> {
        self.accepted().cloned().collect()
    }

    pub fn rejected(&self) -> &BTreeSet<ComponentIndex> {
        &self.rejected
    }

    pub fn grid(&self, u: &ComponentIndex) -> Option<&Arc<SparseGrid>> {
        self.grids.get(u)
    }

    pub fn grids(&self) -> &BTreeMap<ComponentIndex, Arc<SparseGrid>> {
        &self.grids
    }

    pub fn coefficients(&self) -> &BTreeMap<ComponentIndex, i64> {
        &self.coeffs
    }

    /// Quadrature of the cut interpolant of `u` (of `f(x̄)` for the empty one).
    pub fn cut_quadrature(&self, u: &ComponentIndex) -> Option<&[f64]> {
        self.cut_quadratures.get(u).map(Vec::as_slice)
    }

    /// Quadrature of the component function `f_u`.
    pub fn component_quadrature(&self, u: &ComponentIndex) -> Option<&[f64]> {
        self.component_quadratures.get(u).map(Vec::as_slice)
    }

    pub fn orders(&self) -> &[OrderSummary] {
        &self.orders
    }

    /// Sum of the component quadratures, equal to `Σ b_i Q(cut_i)`.
    pub fn quadrature(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.out_dim];
        for cq in self.component_quadratures.values() {
            for (a, b) in q.iter_mut().zip(cq) {
                *a += b;
            }
        }
        q
    }

    /// Grid points over all accepted components plus the anchor.
    pub fn grid_points(&self) -> usize {
        1 + self.grids.values().map(|g| g.len()).sum::<usize>()
    }

    /// Highest order that holds an accepted component.
    pub fn max_order(&self) -> usize {
        self.grids.keys().map(ComponentIndex::order).max().unwrap_or(0)
    }

    pub(crate) fn from_parts(
        anchor: AnchorPoint,
        options: DecomposeOptions,
        grids: BTreeMap<ComponentIndex, Arc<SparseGrid>>,
        rejected: BTreeSet<ComponentIndex>,
        orders: Vec<OrderSummary>,
    ) -> Result<Self> {
        let dim = anchor.dim();
        let out_dim = anchor.value.len();
        let mut cut_quadratures = BTreeMap::new();
        cut_quadratures.insert(ComponentIndex::empty(), anchor.value.clone());
        for (u, g) in &grids {
            if g.dim() != u.order() || g.out_dim() != out_dim {
                return Err(DdsgError::InconsistentFamily(format!("grid shape of {u} does not match")));
            }
            cut_quadratures.insert(u.clone(), g.quadrature());
        }
        if let Some(z) = rejected.iter().find(|z| grids.keys().any(|u| u.is_superset_of(z))) {
            return Err(DdsgError::InconsistentFamily(format!("an accepted component contains rejected {z}")));
        }
        let family: BTreeSet<ComponentIndex> = cut_quadratures.keys().cloned().collect();
        let coeffs = combination_coefficients(&family)?;
        let component_quadratures = family
            .iter()
            .map(|u| (u.clone(), telescoped_quadrature(u, &cut_quadratures)))
            .collect();
        Ok(Self {
            dim,
            out_dim,
            anchor,
            options,
            grids,
            rejected,
            cut_quadratures,
            component_quadratures,
            coeffs,
            orders,
        })
    }
}

/// `Q f_u = Σ_{v ⊆ u} (−1)^{|u|−|v|} Q(cut_v)`.
fn telescoped_quadrature(u: &ComponentIndex, cut_q: &BTreeMap<ComponentIndex, Vec<f64>>) -> Vec<f64> {
    let m = cut_q.values().next().map_or(0, Vec::len);
    let mut q = vec![0.0; m];
    for v in u.subsets() {
        let sign = if (u.order() - v.order()) % 2 == 0 { 1.0 } else { -1.0 };
        let cq = &cut_q[&v];
        for (a, b) in q.iter_mut().zip(cq) {
            *a += sign * b;
        }
    }
    q
}

/// Expansion criterion ρ between consecutive cumulative quadratures.
///
/// A vanishing denominator yields [`DdsgError::ZeroDenominator`]; callers
/// should keep expanding in that case.
pub fn expansion_rho(previous: &[f64], current: &[f64]) -> Result<f64> {
    let denom = norm2(previous);
    if denom == 0.0 {
        return Err(DdsgError::ZeroDenominator("expansion criterion"));
    }
    let diff: Vec<f64> = current.iter().zip(previous).map(|(c, p)| c - p).collect();
    Ok(norm2(&diff) / denom)
}

/// Active-dimension coefficient η_u of a component quadrature relative to
/// the cumulative quadrature of all lower orders.
pub fn eta(component: &[f64], lower_cumulative: &[f64]) -> Result<f64> {
    let denom = norm2(lower_cumulative);
    if denom == 0.0 {
        return Err(DdsgError::ZeroDenominator("active dimension criterion"));
    }
    Ok(norm2(component) / denom)
}

/// `Σ_{k=1}^{k_max} C(d,k) |V_{ℓ,k}| + 1` grid points of a full truncated
/// decomposition with regular component grids.
pub fn grid_count(d: usize, k_max: usize, max_level: u32) -> Result<u64> {
    let mut total: u64 = 1;
    for k in 1..=k_max.min(d) {
        let comps = crate::numerics::binomial(d as u64, k as u64).ok_or(DdsgError::CountOverflow)?;
        let nodes = regular_node_count(k, max_level).ok_or(DdsgError::CountOverflow)?;
        total = comps
            .checked_mul(nodes)
            .and_then(|c| total.checked_add(c))
            .ok_or(DdsgError::CountOverflow)?;
    }
    Ok(total)
}

/// Adaptive cut-HDMR decomposition of `f` around `anchor`.
///
/// Order by order, every component not containing a rejected one is built as
/// a sparse grid of the cut function (component builds run on the coarse
/// layer of `rt`, grid-point evaluations on its fine layer). After the order
/// is complete the coordinator applies the active-dimension criterion to
/// components of order ≥ 2 (order 1 is always kept), then the expansion
/// criterion, and stops when `ρ < ε_ρ` or `k = k_max`.
pub fn decompose<E: Evaluator + ?Sized>(
    f: &E,
    anchor: AnchorPoint,
    opts: &DecomposeOptions,
    rt: &Runtime,
) -> Result<DdsgFunction> {
    let d = f.in_dim();
    opts.validate(d)?;
    if anchor.dim() != d || anchor.value.len() != f.out_dim() {
        return Err(DdsgError::DimensionMismatch {
            expected: d,
            got: anchor.dim(),
        });
    }
    let mut grids: BTreeMap<ComponentIndex, Arc<SparseGrid>> = BTreeMap::new();
    let mut rejected: BTreeSet<ComponentIndex> = BTreeSet::new();
    let mut cut_q: BTreeMap<ComponentIndex, Vec<f64>> = BTreeMap::new();
    cut_q.insert(ComponentIndex::empty(), anchor.value.clone());
    let mut cumulative = anchor.value.clone();
    let mut orders = Vec::new();

    for k in 1..=opts.k_max {
        let current = candidates(d, k, &rejected);
        if current.is_empty() {
            break;
        }
        let costs: Vec<u64> = current
            .iter()
            .map(|c| regular_node_count(c.order(), opts.grid.max_level).unwrap_or(u64::MAX))
            .collect();
        let built = rt
            .try_map_balanced(&current, &costs, |_, c| {
                let cut = cut_evaluator(f, &anchor, c)?;
                build(&cut, &opts.grid, rt).map_err(|e| e.in_component(c))
            })
            .map_err(|fail| fail.error)?;

        // synchronize: acceptance bookkeeping on the coordinator only
        let mut summary = OrderSummary {
            order: k,
            accepted: Vec::new(),
            rejected: Vec::new(),
            eta: Vec::new(),
            rho: None,
            grid_points: 0,
        };
        let lower = cumulative.clone();
        let mut next_cumulative = cumulative.clone();
        for (c, grid) in current.into_iter().zip(built) {
            cut_q.insert(c.clone(), grid.quadrature());
            let qc = telescoped_quadrature(&c, &cut_q);
            let keep = if k == 1 {
                true
            } else {
                match eta(&qc, &lower) {
                    Ok(value) => {
                        summary.eta.push((c.clone(), value));
                        value >= opts.eps_eta
                    }
                    Err(_) => {
                        summary.eta.push((c.clone(), f64::INFINITY));
                        true
                    }
                }
            };
            if keep {
                for (a, b) in next_cumulative.iter_mut().zip(&qc) {
                    *a += b;
                }
                summary.grid_points += grid.len();
                summary.accepted.push(c.clone());
                grids.insert(c, Arc::new(grid));
            } else {
                cut_q.remove(&c);
                summary.rejected.push(c.clone());
                rejected.insert(c);
            }
        }
        summary.rho = expansion_rho(&cumulative, &next_cumulative).ok();
        cumulative = next_cumulative;
        let stop = matches!(summary.rho, Some(rho) if rho < opts.eps_rho);
        orders.push(summary);
        if stop {
            break;
        }
    }
    DdsgFunction::from_parts(anchor, *opts, grids, rejected, orders)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::scalar_fn;
    use crate::sparse_grid::BoundaryMode;

    #[test]
    fn rho_examples() {
        assert_eq!(expansion_rho(&[2.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
        assert!((expansion_rho(&[3.0, 4.0], &[3.0, 9.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(expansion_rho(&[0.0], &[1.0]), Err(DdsgError::ZeroDenominator(_))));
        assert_eq!(eta(&[0.0], &[2.0]).unwrap(), 0.0);
        assert!(eta(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn count_examples() {
        assert_eq!(grid_count(4, 1, 3).unwrap(), 29);
        assert_eq!(grid_count(2, 2, 2).unwrap(), 12);
        assert_eq!(grid_count(7, 0, 5).unwrap(), 1);
        assert!(matches!(grid_count(300, 30, 30), Err(DdsgError::CountOverflow)));
    }

    #[test]
    fn options_validated() {
        let f = scalar_fn(3, |x| x[0]);
        let a = AnchorPoint::center(&f).unwrap();
        let g = GridOptions::regular(2, BoundaryMode::ModifiedLinear);
        let rt = Runtime::sequential();
        assert!(decompose(&f, a.clone(), &DecomposeOptions::new(0, 0.0, g), &rt).is_err());
        assert!(decompose(&f, a.clone(), &DecomposeOptions::new(4, 0.0, g), &rt).is_err());
        assert!(decompose(&f, a, &DecomposeOptions::new(2, -1.0, g), &rt).is_err());
    }

    #[test]
    fn separable_stops_at_order_two() {
        let f = scalar_fn(3, |x| x[0] + x[1] + x[2]);
        // off-centre anchor: at the mean every order-1 quadrature vanishes and ρ stops at k = 1
        let a = AnchorPoint::at(&f, vec![0.2, 0.3, 0.4]).unwrap();
        let mut opts = DecomposeOptions::new(3, 0.0, GridOptions::regular(3, BoundaryMode::ModifiedLinear));
        opts.eps_rho = 1e-4;
        let ddsg = decompose(&f, a, &opts, &Runtime::sequential()).unwrap();
        assert_eq!(ddsg.orders().len(), 2);
        assert!(ddsg.orders()[1].rho.unwrap() < 1e-12);
        assert_eq!(ddsg.accepted().count(), 1 + 3 + 3);
        for s in &ddsg.orders()[1].accepted {
            assert!(ddsg.component_quadrature(s).unwrap()[0].abs() < 1e-14);
        }
    }

    #[test]
    fn rejected_supersets_never_built() {
        // x0·x1 has a centred component of zero mean: η_{0,1} = 0 at the centre anchor
        let f = scalar_fn(3, |x| x[0] * x[1] + x[1] * x[2] * 2.0 + x[0] * x[2] + x[0]);
        let a = AnchorPoint::center(&f).unwrap();
        let mut opts = DecomposeOptions::new(3, 1e-3, GridOptions::regular(3, BoundaryMode::ModifiedLinear));
        opts.eps_rho = 0.0;
        let ddsg = decompose(&f, a, &opts, &Runtime::sequential()).unwrap();
        let z = ComponentIndex::new(vec![0, 1]).unwrap();
        assert!(ddsg.rejected().contains(&z));
        assert!(ddsg.accepted().all(|u| !u.is_superset_of(&z)));
        assert!(ddsg.orders().len() <= 3);
        if let Some(third) = ddsg.orders().get(2) {
            assert!(third.accepted.is_empty() && third.rejected.is_empty());
        }
    }
}
