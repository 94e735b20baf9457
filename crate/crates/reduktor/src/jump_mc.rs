//! Direct simulation of the reduction process: sample Poisson jump times,
//! compose the evolutions between jumps and average.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::dstoch::{validate_dstoch, DStochError, DStochMatrix};
use crate::source::EvolutionSource;

/// Fewest realizations accepted by [`monte_carlo_average`].
pub const MIN_SAMPLES: usize = 100;
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("at least {MIN_SAMPLES} realizations are required, got {0}")]
    TooFewSamples(usize),
    #[error("reduction rate must be nonnegative, got {0}")]
    NegativeRate(f64),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("realization product is not doubly stochastic: {0}")]
    Product(#[from] DStochError),
}

/// Jump times `0 < t₁ < … < t_k < T` of one history.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonRealization {
    pub horizon: f64,
    pub jumps: Vec<f64>,
}

impl PoissonRealization {
    /// Gaps `t₁, t₂ − t₁, …, T − t_k` in chronological order.
    pub fn gaps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        let mut out: Vec<f64> = self
            .jumps
            .iter()
            .map(|&t| {
                let g = t - prev;
                prev = t;
                g
            })
            .collect();
        out.push(self.horizon - prev);
        out
    }
}

/// Generator for realization number `index` of a run seeded with `seed`.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Count ~ Poisson(νT), then that many sorted uniform times on `(0, T)`.
pub fn sample_realization<R: Rng + ?Sized>(
    nu: f64,
    horizon: f64,
    rng: &mut R,
) -> PoissonRealization {
    let lambda = nu * horizon;
    let count = if lambda > 0.0 {
        Poisson::new(lambda)
            .expect("positive finite rate")
            .sample(rng) as usize
    } else {
        0
    };
    let mut jumps: Vec<f64> = (0..count)
        .map(|_| {
            let u: f64 = Open01.sample(rng);
            horizon * u
        })
        .collect();
    jumps.sort_by(f64::total_cmp);
    PoissonRealization { horizon, jumps }
}

fn product<S: EvolutionSource + ?Sized>(source: &S, r: &PoissonRealization) -> DMatrix<f64> {
    let mut gaps = r.gaps().into_iter();
    let mut acc = source.eval(gaps.next().expect("at least one gap"));
    for g in gaps {
        acc = source.eval(g) * acc;
    }
    acc
}

/// `M(T − t_k) ⋯ M(t₂ − t₁) M(t₁)`; the last gap acts last.
pub fn evolve_realization<S: EvolutionSource + ?Sized>(
    source: &S,
    r: &PoissonRealization,
) -> Result<DStochMatrix, McError> {
    Ok(validate_dstoch(product(source, r), 1e-9)?)
}

/// Entrywise sample mean and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// Fraction of entries with `|mean − reference| ≤ k·stderr`.
    pub fn agreement(&self, reference: &DMatrix<f64>, k: f64) -> f64 {
        let hits = self
            .mean
            .iter()
            .zip(reference.iter())
            .zip(self.stderr.iter())
            .filter(|((m, r), s)| (*m - *r).abs() <= k * *s)
            .count();
        hits as f64 / self.mean.len() as f64
    }
}

/// Averages `samples` independent realizations.
///
/// Realization `r` draws from its own stream of the seeded generator and
/// realizations are reduced in fixed chunks in index order, so the result
/// does not depend on the number of worker threads.
pub fn monte_carlo_average<S: EvolutionSource + ?Sized>(
    source: &S,
    nu: f64,
    horizon: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    if samples < MIN_SAMPLES {
        return Err(McError::TooFewSamples(samples));
    }
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(McError::NegativeRate(nu));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(McError::InvalidHorizon(horizon));
    }
    let n = source.dim();
    let reference = source.eval(horizon);
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<Result<_, McError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = DMatrix::zeros(n, n);
            let mut sq = DMatrix::zeros(n, n);
            for r in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let mut rng = realization_rng(seed, r as u64);
                let real = sample_realization(nu, horizon, &mut rng);
                let d = evolve_realization(source, &real)?.into_inner() - &reference;
                sq += d.component_mul(&d);
                sum += d;
            }
            Ok((sum, sq))
        })
        .collect();
    let mut sum = DMatrix::zeros(n, n);
    let mut sq = DMatrix::zeros(n, n);
    for p in partial {
        let (s, q) = p?;
        sum += s;
        sq += q;
    }
    let r = samples as f64;
    let mean_dev = &sum / r;
    let stderr = DMatrix::from_fn(n, n, |i, j| {
        let var = (sq[(i, j)] - sum[(i, j)] * mean_dev[(i, j)]).max(0.0) / (r - 1.0);
        (var / r).sqrt()
    });
    Ok(McEstimate {
        mean: reference + mean_dev,
        stderr,
        samples,
        seed,
    })
}
