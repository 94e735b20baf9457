//! Time-dependent evolution matrices `M(t)` consumed by the solvers.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dstoch::DStochMatrix;

/// A map `t -> M(t)` into `n x n` matrices (doubly stochastic for the matrix
/// solvers, arbitrary real for the scalar reduction).
///
/// `eval` returns the right-continuous value. Sources with jumps report the
/// left limit through `left_limit`; solvers align the grid with the jumps.
pub trait EvolutionSource: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64) -> DMatrix<f64>;

    /// `Some(M(t⁻))` when `M` jumps at `t`.
    fn left_limit(&self, _t: f64) -> Option<DMatrix<f64>> {
        None
    }

    fn is_continuous(&self) -> bool {
        true
    }
}

impl<S: EvolutionSource + ?Sized> EvolutionSource for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64) -> DMatrix<f64> {
        (**self).eval(t)
    }
    fn left_limit(&self, t: f64) -> Option<DMatrix<f64>> {
        (**self).left_limit(t)
    }
    fn is_continuous(&self) -> bool {
        (**self).is_continuous()
    }
}

impl<S: EvolutionSource + ?Sized + Send> EvolutionSource for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64) -> DMatrix<f64> {
        (**self).eval(t)
    }
    fn left_limit(&self, t: f64) -> Option<DMatrix<f64>> {
        (**self).left_limit(t)
    }
    fn is_continuous(&self) -> bool {
        (**self).is_continuous()
    }
}

/// `M(t) = M` for every `t ≥ 0`.
#[derive(Debug, Clone)]
pub struct ConstantSource(pub DStochMatrix);

impl EvolutionSource for ConstantSource {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, _t: f64) -> DMatrix<f64> {
        self.0.as_matrix().clone()
    }
}

/// Wraps a closure as a continuous source.
#[derive(Clone)]
pub struct FnSource {
    dim: usize,
    f: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
}

impl FnSource {
    pub fn new(dim: usize, f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Arc::new(f),
        }
    }
}

impl EvolutionSource for FnSource {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64) -> DMatrix<f64> {
        (self.f)(t)
    }
}

/// `t -> M(factor · t)`.
#[derive(Debug, Clone)]
pub struct TimeScaled<S> {
    pub inner: S,
    pub factor: f64,
}

impl<S: EvolutionSource> EvolutionSource for TimeScaled<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, t: f64) -> DMatrix<f64> {
        self.inner.eval(self.factor * t)
    }
    fn left_limit(&self, t: f64) -> Option<DMatrix<f64>> {
        self.inner.left_limit(self.factor * t)
    }
    fn is_continuous(&self) -> bool {
        self.inner.is_continuous()
    }
}

/// Direct sum `diag(M_1(t), M_2(t), ...)` of independent sources.
pub struct BlockDiagonal<S> {
    pub parts: Vec<S>,
}

impl<S: EvolutionSource> EvolutionSource for BlockDiagonal<S> {
    fn dim(&self) -> usize {
        self.parts.iter().map(|p| p.dim()).sum()
    }
    fn eval(&self, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut offset = 0;
        for p in &self.parts {
            let d = p.dim();
            m.view_mut((offset, offset), (d, d)).copy_from(&p.eval(t));
            offset += d;
        }
        m
    }
}
