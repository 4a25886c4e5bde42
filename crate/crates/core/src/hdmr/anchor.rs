use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ComponentIndex;
use crate::error::{DdsgError, Result};
use crate::evaluator::{evaluate_checked, Evaluator};
use crate::runtime::Runtime;

/// Default number of candidate points drawn by [`select_anchor`].
pub const DEFAULT_ANCHOR_SAMPLES: usize = 1000;

/// Reference point of the cut decomposition together with `f(x̄)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub coords: Vec<f64>,
    pub value: Vec<f64>,
}

impl AnchorPoint {
    /// Evaluates `f` at `coords`.
    pub fn at<E: Evaluator + ?Sized>(f: &E, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != f.in_dim() {
            return Err(DdsgError::DimensionMismatch {
                expected: f.in_dim(),
                got: coords.len(),
            });
        }
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(DdsgError::OutOfDomain { point: coords });
        }
        let value = evaluate_checked(f, &coords)?;
        Ok(Self { coords, value })
    }

    /// The centre of the unit cube.
    pub fn center<E: Evaluator + ?Sized>(f: &E) -> Result<Self> {
        Self::at(f, vec![0.5; f.in_dim()])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Picks, among `n_samples` seeded uniform draws, the point whose value is
/// closest in L1 to the sample mean of `f`. Ties go to the earliest sample.
pub fn select_anchor<E: Evaluator + ?Sized>(f: &E, n_samples: usize, seed: u64, rt: &Runtime) -> Result<AnchorPoint> {
    if n_samples == 0 {
        return Err(DdsgError::InvalidArgument("anchor selection needs at least one sample".into()));
    }
    let d = f.in_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n_samples).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
    let values = rt
        .try_map(&points, |_, x| evaluate_checked(f, x))
        .map_err(|fail| fail.error)?;
    let m = f.out_dim();
    let mut mean = vec![0.0; m];
    for v in &values {
        for (a, b) in mean.iter_mut().zip(v) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n_samples as f64);
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, v) in values.iter().enumerate() {
        let dist: f64 = v.iter().zip(&mean).map(|(a, b)| (a - b).abs()).sum();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    Ok(AnchorPoint {
        coords: points[best].clone(),
        value: values[best].clone(),
    })
}

/// `g(y) = f(x)` with `x_j = y_k` for the `k`-th dimension of `u` and
/// `x_j = x̄_j` elsewhere.
pub struct CutEvaluator<'a, E: ?Sized> {
    f: &'a E,
    anchor: &'a [f64],
    dims: &'a [usize],
}

pub fn cut_evaluator<'a, E: Evaluator + ?Sized>(
    f: &'a E,
    anchor: &'a AnchorPoint,
    u: &'a ComponentIndex,
) -> Result<CutEvaluator<'a, E>> {
    if u.is_empty() {
        return Err(DdsgError::InvalidArgument("cut evaluator needs a non-empty component".into()));
    }
    if anchor.dim() != f.in_dim() {
        return Err(DdsgError::DimensionMismatch {
            expected: f.in_dim(),
            got: anchor.dim(),
        });
    }
    if let Some(&bad) = u.dims().iter().find(|&&j| j >= f.in_dim()) {
        return Err(DdsgError::InvalidArgument(format!("component {u} names dimension {bad} >= {}", f.in_dim())));
    }
    Ok(CutEvaluator {
        f,
        anchor: &anchor.coords,
        dims: u.dims(),
    })
}

impl<E: Evaluator + ?Sized> Evaluator for CutEvaluator<'_, E> {
    fn in_dim(&self) -> usize {
        self.dims.len()
    }

    fn out_dim(&self) -> usize {
        self.f.out_dim()
    }

    fn evaluate(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let mut x = self.anchor.to_vec();
        for (&j, &yj) in self.dims.iter().zip(y) {
            x[j] = yj;
        }
        self.f.evaluate(&x, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::scalar_fn;

    #[test]
    fn cut_fixes_other_coordinates() {
        let f = scalar_fn(3, |x| x[0] * x[1] * x[2]);
        let anchor = AnchorPoint::center(&f).unwrap();
        let u = ComponentIndex::singleton(1);
        let g = cut_evaluator(&f, &anchor, &u).unwrap();
        let mut out = [0.0];
        g.evaluate(&[0.5], &mut out).unwrap();
        assert_eq!(out[0], 0.125);

        let f = scalar_fn(3, |x| x[0] + 10.0 * x[1] + 100.0 * x[2]);
        let anchor = AnchorPoint::at(&f, vec![0.1, 0.4, 0.7]).unwrap();
        let u = ComponentIndex::new(vec![0, 1]).unwrap();
        cut_evaluator(&f, &anchor, &u).unwrap().evaluate(&[0.2, 0.9], &mut out).unwrap();
        assert!((out[0] - (0.2 + 9.0 + 70.0)).abs() < 1e-12);

        let full = ComponentIndex::new(vec![0, 1, 2]).unwrap();
        cut_evaluator(&f, &anchor, &full).unwrap().evaluate(&[0.3, 0.6, 0.9], &mut out).unwrap();
        assert!((out[0] - (0.3 + 6.0 + 90.0)).abs() < 1e-12);

        assert!(cut_evaluator(&f, &anchor, &ComponentIndex::empty()).is_err());
    }

    #[test]
    fn constant_function_takes_first_sample() {
        let f = scalar_fn(2, |_| 3.5);
        let rt = Runtime::sequential();
        let a = select_anchor(&f, 50, 7, &rt).unwrap();
        assert_eq!(a.value, vec![3.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let first: Vec<f64> = (0..2).map(|_| rng.gen()).collect();
        assert_eq!(a.coords, first);
    }

    #[test]
    fn anchor_value_near_mean() {
        let rt = Runtime::sequential();
        let f = scalar_fn(2, |x| x[0] + x[1]);
        let a = select_anchor(&f, 5000, 1, &rt).unwrap();
        assert!((a.value[0] - 1.0).abs() < 0.02);
        // E[x²] = 1/3
        let f = scalar_fn(3, |x| x[0] * x[0]);
        let a = select_anchor(&f, 10_000, 2, &rt).unwrap();
        assert!((a.value[0] - 1.0 / 3.0).abs() < 0.02);
        let again = select_anchor(&f, 10_000, 2, &rt).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn nan_propagates() {
        let f = scalar_fn(1, |x| if x[0] < 2.0 { f64::NAN } else { 0.0 });
        assert!(matches!(
            select_anchor(&f, 3, 0, &Runtime::sequential()),
            Err(DdsgError::NonFinite { .. })
        ));
        assert!(select_anchor(&f, 0, 0, &Runtime::sequential()).is_err());
    }
}
