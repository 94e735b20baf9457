//! The averaged evolution `M̄(T)` as the solution of
//!
//! ```text
//! M̄(T) = e^{−νT} ( M(T) + ν ∫₀ᵀ M(T − t) M̄(t) e^{νt} dt )
//! ```
//!
//! and of its generalisation with kernel `(a, b)`:
//!
//! ```text
//! M̄(T) = a(T) M(T) + ∫₀ᵀ M(T − t) M̄(t) b(t, T) dt,   ∫₀ᵀ b(t, T) dt = 1 − a(T).
//! ```
//!
//! [`march_solve`] marches the equation on a uniform grid; [`neumann_series`]
//! sums the realization-count expansion with an independent quadrature.

mod derivative;
pub(crate) mod engine;
mod kernel;
mod series;

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dstoch::{validate_dstoch, DStochError, DStochMatrix};
use crate::source::EvolutionSource;

pub use derivative::derivative_consistency;
pub use kernel::{kernel_normalization_residual, Kernel};
pub use series::{
    default_series_cap, neumann_series, poisson_tail, SeriesEvaluation, SERIES_TAIL_TOL,
};

use engine::{KernelWeights, PoissonWeights, Samples};

/// Tolerance used when validating every trajectory node.
pub const TOL_TRAJ: f64 = 1e-7;
/// Largest admissible `h·ν` for the series evaluation.
pub const MAX_H_NU: f64 = 0.5;
/// Kernel normalization must hold to this tolerance before marching.
pub const KERNEL_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VolterraError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("reduction rate must be nonnegative, got {0}")]
    NegativeRate(f64),
    #[error("grid too coarse: h·ν = {h_nu} exceeds {MAX_H_NU}")]
    GridTooCoarse { h_nu: f64 },
    #[error(
        "series truncated after {cap} terms leaves Poisson tail {tail:e} above {SERIES_TAIL_TOL:e}"
    )]
    TailBoundExceedsTol { cap: usize, tail: f64 },
    #[error("node {node} is not doubly stochastic: {source}")]
    ValidationFailure { node: usize, source: DStochError },
    #[error("kernel normalization violated at T = {t}: residual {residual:e}")]
    KernelNormalizationViolation { t: f64, residual: f64 },
    #[error("derivative order {0} is not supported (only k = 1)")]
    UnsupportedOrder(usize),
    #[error("time {t} lies outside the grid [0, {t_max}]")]
    HorizonOutsideGrid { t: f64, t_max: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("implicit step at node {0} is singular")]
    SingularStep(usize),
}

/// Uniform grid `{0, h, 2h, ..., t_max}` with `h = t_max / steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_max: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, steps: usize) -> Result<Self, VolterraError> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(VolterraError::InvalidGrid(format!(
                "t_max must be positive and finite, got {t_max}"
            )));
        }
        if steps == 0 {
            return Err(VolterraError::InvalidGrid("steps must be positive".into()));
        }
        Ok(Self { t_max, steps })
    }

    /// Grid with step as close as possible to (and not above) `h`.
    pub fn with_step(t_max: f64, h: f64) -> Result<Self, VolterraError> {
        if !(h > 0.0) {
            return Err(VolterraError::InvalidGrid(format!(
                "step must be positive, got {h}"
            )));
        }
        Self::new(t_max, ((t_max / h) - 1e-9).ceil().max(1.0) as usize)
    }

    pub fn h(&self) -> f64 {
        self.t_max / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_max
        } else {
            self.t_max * i as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|i| self.node(i))
    }

    /// Index of the node at `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.h();
        let k = x.round();
        ((x - k).abs() < 1e-9 && k >= 0.0 && k as usize <= self.steps).then_some(k as usize)
    }
}

/// Quadrature used by the marching solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Piecewise-linear interpolation of `M(T − t) M̄(t)` integrated exactly
    /// against the exponential weight (order 2).
    #[default]
    ExponentialTrapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Reduction rate ν (expected events per unit time).
    pub nu: f64,
    pub grid: TimeGrid,
    /// Truncation of the Neumann series; `None` picks the smallest order
    /// whose Poisson tail is below [`SERIES_TAIL_TOL`].
    pub series_cap: Option<usize>,
    pub quadrature: Quadrature,
}

impl SolverConfig {
    pub fn new(nu: f64, grid: TimeGrid) -> Result<Self, VolterraError> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(VolterraError::NegativeRate(nu));
        }
        Ok(Self {
            nu,
            grid,
            series_cap: None,
            quadrature: Quadrature::default(),
        })
    }

    pub fn with_series_cap(mut self, cap: usize) -> Self {
        self.series_cap = Some(cap);
        self
    }
}

/// Matrix values on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<DStochMatrix>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.nodes()
    }

    pub fn last(&self) -> &DStochMatrix {
        self.values.last().expect("trajectories are never empty")
    }

    pub fn at(&self, t: f64) -> Option<&DStochMatrix> {
        self.grid.index_of(t).map(|i| &self.values[i])
    }

    /// Largest entrywise difference over all nodes.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| crate::dstoch::sup_distance(a.as_matrix(), b.as_matrix()))
            .fold(0.0, f64::max)
    }

    pub fn compression_profile(&self) -> Vec<f64> {
        self.values.iter().map(DStochMatrix::compression).collect()
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        crate::io::write_trajectory_csv(&mut buf, self).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

fn into_trajectory(out: engine::MarchOutput, grid: TimeGrid) -> Result<Trajectory, VolterraError> {
    let values = (0..=grid.steps)
        .map(|i| {
            validate_dstoch(engine::to_matrix(out.n, out.right_at(i)), TOL_TRAJ)
                .map_err(|source| VolterraError::ValidationFailure { node: i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory { grid, values })
}

/// Marches the averaged-evolution equation on `cfg.grid`.
///
/// The exponential weight is integrated exactly on every panel, so row and
/// column sums are preserved up to rounding. Jumps of the source must fall on
/// grid nodes; one-sided limits are used on both sides of a jump.
pub fn march_solve<S: EvolutionSource + ?Sized>(
    source: &S,
    cfg: &SolverConfig,
) -> Result<Trajectory, VolterraError> {
    if cfg.nu < 0.0 {
        return Err(VolterraError::NegativeRate(cfg.nu));
    }
    let samples = Samples::take(source, &cfg.grid);
    let weights = PoissonWeights::new(cfg.nu, &cfg.grid);
    let out = engine::march(&samples, &weights, cfg.grid.steps)
        .map_err(|e| VolterraError::SingularStep(e.0))?;
    into_trajectory(out, cfg.grid)
}

/// Marches the generalised equation with kernel `(a, b)`.
pub fn march_solve_general<S: EvolutionSource + ?Sized>(
    source: &S,
    kernel: &Kernel,
    grid: &TimeGrid,
) -> Result<Trajectory, VolterraError> {
    let checks = 16.min(grid.steps);
    for k in 1..=checks {
        let t = grid.node(k * grid.steps / checks);
        let residual = kernel_normalization_residual(kernel, t, 2000);
        if !(residual <= KERNEL_CHECK_TOL) {
            return Err(VolterraError::KernelNormalizationViolation { t, residual });
        }
    }
    let samples = Samples::take(source, grid);
    let weights = KernelWeights { kernel, grid };
    let out = engine::march(&samples, &weights, grid.steps)
        .map_err(|e| VolterraError::SingularStep(e.0))?;
    into_trajectory(out, *grid)
}

/// Samples the source on the grid without solving anything (the `ν = 0` solution).
pub fn sample_trajectory<S: EvolutionSource + ?Sized>(
    source: &S,
    grid: &TimeGrid,
) -> Result<Trajectory, VolterraError> {
    let values = grid
        .nodes()
        .enumerate()
        .map(|(i, t)| {
            validate_dstoch(source.eval(t), TOL_TRAJ)
                .map_err(|source| VolterraError::ValidationFailure { node: i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory {
        grid: *grid,
        values,
    })
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
