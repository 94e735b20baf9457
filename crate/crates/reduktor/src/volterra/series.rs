use rayon::prelude::*;

use crate::dstoch::{validate_dstoch, DStochMatrix};
use crate::source::EvolutionSource;

use super::engine::{gemm_acc, push_row_major, to_matrix};
use super::{SolverConfig, TimeGrid, VolterraError, MAX_H_NU, TOL_TRAJ};

/// Largest admissible Poisson tail of the truncated series.
pub const SERIES_TAIL_TOL: f64 = 1e-10;

/// `P[K > cap]` for `K ~ Poisson(lambda)`, summed directly (no cancellation).
pub fn poisson_tail(lambda: f64, cap: usize) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let mut log_p = -lambda;
    for j in 1..=cap + 1 {
        log_p += (lambda / j as f64).ln();
    }
    let mut k = cap + 1;
    let mut p = log_p.exp();
    let mut sum = 0.0;
    loop {
        sum += p;
        k += 1;
        p *= lambda / k as f64;
        if (k as f64) > lambda && p <= 1e-17 * sum {
            break;
        }
        if p == 0.0 && (k as f64) > lambda {
            break;
        }
    }
    sum.min(1.0)
}

/// Smallest `N` with `P[K > N] < SERIES_TAIL_TOL` for `K ~ Poisson(lambda)`.
pub fn default_series_cap(lambda: f64) -> usize {
    let mut n = lambda.floor() as usize;
    while poisson_tail(lambda, n) >= SERIES_TAIL_TOL {
        n += 1;
    }
    n
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEvaluation {
    pub value: DStochMatrix,
    /// Highest realization count kept.
    pub cap: usize,
    /// Probability mass of the dropped realizations.
    pub tail: f64,
    /// Grid actually used (`T` snapped to a whole number of steps); `None` at `T = 0`.
    pub grid: Option<TimeGrid>,
}

/// Composite Simpson weights on nodes `0..=i` (3/8 rule on the first three
/// panels when `i` is odd, trapezoid when `i = 1`), in units of `h`.
fn simpson_weights(i: usize) -> Vec<f64> {
    let mut w = vec![0.0; i + 1];
    match i {
        0 => {}
        1 => {
            w[0] = 0.5;
            w[1] = 0.5;
        }
        _ => {
            let start = if i % 2 == 1 {
                for (k, c) in [3.0, 9.0, 9.0, 3.0].into_iter().enumerate() {
                    w[k] += c / 8.0;
                }
                3
            } else {
                0
            };
            let mut k = start;
            while k < i {
                w[k] += 1.0 / 3.0;
                w[k + 1] += 4.0 / 3.0;
                w[k + 2] += 1.0 / 3.0;
                k += 2;
            }
        }
    }
    w
}

/// Sums the realization-count expansion
///
/// ```text
/// M̄(T) = Σ_k ν^k e^{−νT} ∫_{0<t₁<…<t_k<T} M(T − t_k) ⋯ M(t₂ − t₁) M(t₁) dt
/// ```
///
/// up to `cfg.series_cap` terms. The iterated integrals are built layer by
/// layer with composite Simpson quadrature on the grid of step `cfg.grid.h()`
/// snapped to `T`. Sources are assumed continuous.
pub fn neumann_series<S: EvolutionSource + ?Sized>(
    source: &S,
    cfg: &SolverConfig,
    big_t: f64,
) -> Result<SeriesEvaluation, VolterraError> {
    let nu = cfg.nu;
    if nu < 0.0 {
        return Err(VolterraError::NegativeRate(nu));
    }
    if !(0.0..=cfg.grid.t_max * (1.0 + 1e-12)).contains(&big_t) {
        return Err(VolterraError::HorizonOutsideGrid {
            t: big_t,
            t_max: cfg.grid.t_max,
        });
    }
    let lambda = nu * big_t;
    let cap = cfg.series_cap.unwrap_or_else(|| default_series_cap(lambda));
    let tail = poisson_tail(lambda, cap);
    if tail > SERIES_TAIL_TOL {
        return Err(VolterraError::TailBoundExceedsTol { cap, tail });
    }
    let n = source.dim();
    if big_t == 0.0 {
        let value = validate_dstoch(source.eval(0.0), TOL_TRAJ)
            .map_err(|source| VolterraError::ValidationFailure { node: 0, source })?;
        return Ok(SeriesEvaluation {
            value,
            cap,
            tail,
            grid: None,
        });
    }
    let steps = ((big_t / cfg.grid.h()).round() as usize).max(1);
    let grid = TimeGrid::new(big_t, steps)?;
    let h = grid.h();
    if h * nu > MAX_H_NU {
        return Err(VolterraError::GridTooCoarse { h_nu: h * nu });
    }

    let nn = n * n;
    let mut samples = Vec::with_capacity((steps + 1) * nn);
    for t in grid.nodes() {
        push_row_major(&mut samples, &source.eval(t));
    }
    let decay: Vec<f64> = (0..=steps).map(|k| (-nu * h * k as f64).exp()).collect();
    let weights: Vec<Vec<f64>> = (0..=steps).map(simpson_weights).collect();

    // layer k at node i holds ν^k e^{−ν t_i} × (k-fold integral at t_i)
    let mut layer: Vec<f64> = (0..=steps)
        .flat_map(|i| {
            let d = decay[i];
            samples[i * nn..(i + 1) * nn].iter().map(move |v| v * d)
        })
        .collect();
    let mut total = layer[steps * nn..].to_vec();
    for _ in 1..=cap {
        let next: Vec<f64> = (0..=steps)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut acc = vec![0.0; nn];
                for (j, w) in weights[i].iter().enumerate() {
                    gemm_acc(
                        &mut acc,
                        nu * h * w * decay[i - j],
                        &samples[(i - j) * nn..(i - j + 1) * nn],
                        &layer[j * nn..(j + 1) * nn],
                        n,
                    );
                }
                acc
            })
            .collect();
        layer = next;
        for (t, v) in total.iter_mut().zip(&layer[steps * nn..]) {
            *t += v;
        }
    }
    let value = validate_dstoch(to_matrix(n, &total), TOL_TRAJ).map_err(|source| {
        VolterraError::ValidationFailure {
            node: steps,
            source,
        }
    })?;
    Ok(SeriesEvaluation {
        value,
        cap,
        tail,
        grid: Some(grid),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_weights_integrate_cubics() {
        for i in 2..9 {
            let w = simpson_weights(i);
            let integral: f64 = w
                .iter()
                .enumerate()
                .map(|(k, w)| w * (k as f64).powi(3))
                .sum();
            assert!(
                (integral - (i as f64).powi(4) / 4.0).abs() < 1e-9,
                "i = {i}"
            );
        }
        assert_eq!(simpson_weights(1), vec![0.5, 0.5]);
    }

    #[test]
    fn tail_and_cap() {
        assert_eq!(poisson_tail(0.0, 0), 0.0);
        assert!((poisson_tail(1.0, 0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let lambda = 3.0;
        let cap = default_series_cap(lambda);
        assert!(poisson_tail(lambda, cap) < SERIES_TAIL_TOL);
        assert!(poisson_tail(lambda, cap - 1) >= SERIES_TAIL_TOL);
        assert_eq!(default_series_cap(0.0), 0);
    }
}
