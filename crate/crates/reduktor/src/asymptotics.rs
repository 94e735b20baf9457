//! Long-time behaviour of `M̄`: the δ-statistic, convergence profiles towards
//! the (block) maximal-entropy limit, the cyclic-permutation example and the
//! time-rescaling law for periodic sources.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{random_unitary, BathModel, C64};
use crate::dstoch::{
    block_compression, compression, sup_distance, support_blocks, theta_of, validate_dstoch,
    BlockPartition, DStochError, DStochMatrix, Permutation,
};
use crate::scalar::ScalarInput;
use crate::source::{ConstantSource, EvolutionSource, TimeScaled};
use crate::volterra::engine::exp_far_weight;
use crate::volterra::{march_solve, SolverConfig, TimeGrid, Trajectory, VolterraError};

/// Entries above this count as support when predicting block limits.
pub const SUPPORT_TOL: f64 = 1e-9;
pub const DEFAULT_EPS_CONV: f64 = 1e-3;
pub const DEFAULT_WINDOW: f64 = 0.1;
/// Growth of the distance across the final window attributed to rounding.
pub const PLATEAU_SLACK: f64 = 1e-12;
pub const SUPPORT_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticsError {
    #[error(transparent)]
    Solver(#[from] VolterraError),
    #[error(transparent)]
    Matrix(#[from] DStochError),
    #[error("permutation has order {found}, expected {k}")]
    NotCyclicOfOrderK { k: usize, found: usize },
    #[error("source is not 2π-periodic: |M(t + 2π) − M(t)| = {residual:e} at t = {t}")]
    PeriodMismatch { t: f64, residual: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(String),
}

/// `∫₀ᴴ α(t) e^{−t} dt` with the linear interpolant of α on `steps` panels
/// integrated exactly against `e^{−t}`; the neglected tail is at most `e^{−H}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaStatistic {
    pub value: f64,
    pub tail_bound: f64,
}

pub fn delta_statistic(input: &ScalarInput, horizon: f64, steps: usize) -> DeltaStatistic {
    let steps = steps.max(1);
    let h = horizon / steps as f64;
    let right = exp_far_weight(h);
    let left = -(-h).exp_m1() - right;
    let value = (0..steps)
        .map(|k| {
            let t = k as f64 * h;
            (-t).exp() * (left * input.alpha(t) + right * input.alpha(t + h))
        })
        .sum();
    DeltaStatistic {
        value,
        tail_bound: (-horizon).exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    NotConverged,
    IdentitySectorOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceOptions {
    /// Largest admissible distance to the predicted limit over the final window.
    pub eps_conv: f64,
    /// Fraction of nodes forming the final window.
    pub window: f64,
    /// Sampled times used to predict the block structure.
    pub support_samples: usize,
    /// Sampling interval `[0, support_horizon]`; defaults to the grid length.
    pub support_horizon: Option<f64>,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            eps_conv: DEFAULT_EPS_CONV,
            window: DEFAULT_WINDOW,
            support_samples: SUPPORT_SAMPLES,
            support_horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    /// `c(M̄(t))` per node.
    pub c_values: Vec<f64>,
    /// Compression inside the predicted blocks (equals `c_values` for one block).
    pub block_c_values: Vec<f64>,
    pub partition: BlockPartition,
    pub predicted_limit: DStochMatrix,
    pub distance: Vec<f64>,
    pub verdict: Verdict,
    pub trajectory: Trajectory,
}

impl ConvergenceReport {
    pub fn final_distance(&self) -> f64 {
        *self.distance.last().expect("nonempty")
    }

    pub fn max_c(&self) -> f64 {
        self.block_c_values.iter().copied().fold(0.0, f64::max)
    }
}

/// Block structure from the support of `M` at evenly spaced times, and the
/// corresponding block-uniform limit.
pub fn predict_limit<S: EvolutionSource + ?Sized>(
    source: &S,
    horizon: f64,
    samples: usize,
) -> Result<(BlockPartition, DStochMatrix), AsymptoticsError> {
    let samples = samples.max(2);
    let mats = (0..samples)
        .map(|k| {
            let t = horizon * k as f64 / (samples - 1) as f64;
            validate_dstoch(source.eval(t), 1e-9)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let partition = support_blocks(&mats, SUPPORT_TOL)?;
    let limit = theta_of(&partition, source.dim())?;
    Ok((partition, limit))
}

/// Solves on `cfg.grid` and measures the approach to the predicted limit.
///
/// The verdict is `converged` when the distance stays below `eps_conv` on the
/// final window without growing across it and the compression inside the
/// blocks has dropped at least tenfold from its maximum.
pub fn convergence_report<S: EvolutionSource + ?Sized>(
    source: &S,
    cfg: &SolverConfig,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceReport, AsymptoticsError> {
    if !(opts.window > 0.0 && opts.window <= 1.0) {
        return Err(AsymptoticsError::InvalidOption(format!(
            "window must lie in (0, 1], got {}",
            opts.window
        )));
    }
    let horizon = opts.support_horizon.unwrap_or(cfg.grid.t_max);
    let (partition, limit) = predict_limit(source, horizon, opts.support_samples)?;
    let trajectory = march_solve(source, cfg)?;
    let c_values: Vec<f64> = trajectory.values.iter().map(compression).collect();
    let block_c_values = if partition.is_single_block() {
        c_values.clone()
    } else {
        trajectory
            .values
            .iter()
            .map(|m| block_compression(m.as_matrix(), &partition))
            .collect()
    };
    let distance: Vec<f64> = trajectory
        .values
        .iter()
        .map(|m| sup_distance(m.as_matrix(), limit.as_matrix()))
        .collect();

    let verdict = if partition.blocks().is_empty() {
        Verdict::IdentitySectorOnly
    } else {
        let len = distance.len();
        let start = len - ((len as f64 * opts.window).ceil() as usize).clamp(1, len);
        let window = &distance[start..];
        let max_c = block_c_values.iter().copied().fold(0.0, f64::max);
        let settled = window.iter().all(|&d| d < opts.eps_conv)
            && window[window.len() - 1] <= window[0] + PLATEAU_SLACK;
        let contracted = block_c_values[len - 1] <= 0.1 * max_c;
        if settled && contracted {
            Verdict::Converged
        } else {
            Verdict::NotConverged
        }
    };
    Ok(ConvergenceReport {
        times: trajectory.times().collect(),
        c_values,
        block_c_values,
        partition,
        predicted_limit: limit,
        distance,
        verdict,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CyclicReport {
    pub trajectory: Trajectory,
    /// `(1/k) Σ_{i=1}^{k} Pⁱ`.
    pub limit: DStochMatrix,
    /// Largest entrywise distance to the limit at the final node.
    pub limit_residual: f64,
}

/// Constant `M ≡ P` with `P` of order `k`, marched on `[0, T]` in `steps` steps.
pub fn cyclic_example(
    p: &Permutation,
    k: usize,
    nu: f64,
    horizon: f64,
    steps: usize,
) -> Result<CyclicReport, AsymptoticsError> {
    let order = p.order();
    if k == 0 || order != k {
        return Err(AsymptoticsError::NotCyclicOfOrderK { k, found: order });
    }
    let n = p.len();
    let mut sum = DMatrix::zeros(n, n);
    for i in 1..=k {
        sum += p.pow(i).to_matrix();
    }
    let limit = validate_dstoch(sum / k as f64, 1e-12)?;
    let source = ConstantSource(DStochMatrix::permutation(p));
    let cfg = SolverConfig::new(nu, TimeGrid::new(horizon, steps)?)?;
    let trajectory = march_solve(&source, &cfg)?;
    let limit_residual = sup_distance(trajectory.last().as_matrix(), limit.as_matrix());
    Ok(CyclicReport {
        trajectory,
        limit,
        limit_residual,
    })
}

/// Random model whose propagator is exactly `2π`-periodic: the generator is
/// `V diag(k₁, k₂, …) V†` with integer `kᵢ ∈ [−3, 3]` and Haar-random `V`.
pub fn periodic_model<R: Rng + ?Sized>(n: usize, n2: usize, rng: &mut R) -> BathModel {
    let dim = n * n2;
    let v = random_unitary(dim, rng);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |_, _| {
        C64::new(rng.random_range(-3i32..=3) as f64, 0.0)
    }));
    let g = &v * d * v.adjoint();
    let g = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    BathModel::from_generator(n, n2, &g, None).expect("Hermitian by construction")
}

/// Compares the solution for `(M, ν)` with the one for
/// `(M(2πt/τ), 2πν/τ)` at corresponding nodes; returns the largest entrywise
/// difference. `cfg.grid` is the grid of the unscaled problem.
pub fn rescaling_check<S: EvolutionSource + ?Sized>(
    source: &S,
    tau: f64,
    cfg: &SolverConfig,
) -> Result<f64, AsymptoticsError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(AsymptoticsError::InvalidOption(format!(
            "tau must be positive, got {tau}"
        )));
    }
    for k in 0..16 {
        let t = TAU * k as f64 / 16.0 + 0.1;
        let residual = sup_distance(&source.eval(t + TAU), &source.eval(t));
        if residual > 1e-9 {
            return Err(AsymptoticsError::PeriodMismatch { t, residual });
        }
    }
    let base = march_solve(source, cfg)?;
    let factor = TAU / tau;
    let scaled_source = TimeScaled {
        inner: source,
        factor,
    };
    let scaled_cfg = SolverConfig::new(
        cfg.nu * factor,
        TimeGrid::new(cfg.grid.t_max / factor, cfg.grid.steps)?,
    )?;
    let scaled = march_solve(&scaled_source, &scaled_cfg)?;
    Ok(base.sup_distance(&scaled))
}
