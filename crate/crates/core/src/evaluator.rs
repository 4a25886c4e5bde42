//! Black-box function interface shared by the sparse grid and HDMR builders.

use crate::error::{DdsgError, Result};

/// A vector-valued function on `[0,1]^in_dim`.
///
/// Implementations must be safe to call from several threads at once.
pub trait Evaluator: Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn in_dim(&self) -> usize {
        (**self).in_dim()
    }
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }
    fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).evaluate(x, out)
    }
}

/// Wraps an infallible closure `f(x, out)`.
pub struct FnEvaluator<F> {
    in_dim: usize,
    out_dim: usize,
    f: F,
}

impl<F> FnEvaluator<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(in_dim: usize, out_dim: usize, f: F) -> Self {
        Self { in_dim, out_dim, f }
    }
}

/// Scalar-valued closure helper.
pub fn scalar_fn<G>(in_dim: usize, g: G) -> FnEvaluator<impl Fn(&[f64], &mut [f64]) + Sync>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    FnEvaluator::new(in_dim, 1, move |x: &[f64], out: &mut [f64]| out[0] = g(x))
}

impl<F> Evaluator for FnEvaluator<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, out);
        Ok(())
    }
}

/// Evaluates `f` and rejects non-finite outputs, naming the offending point.
pub(crate) fn evaluate_checked<E: Evaluator + ?Sized>(f: &E, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; f.out_dim()];
    f.evaluate(x, &mut out)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(DdsgError::NonFinite { point: x.to_vec() });
    }
    Ok(out)
}
