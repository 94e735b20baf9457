use nalgebra::DMatrix;

use crate::source::EvolutionSource;

use super::engine::{PanelWeights, PoissonWeights};
use super::{max_abs, SolverConfig, Trajectory, VolterraError};

const SOURCE_STEP: f64 = 1e-5;

fn source_derivative<S: EvolutionSource + ?Sized>(source: &S, t: f64) -> DMatrix<f64> {
    let d = SOURCE_STEP;
    if t < d {
        (source.eval(t + d) * 4.0 - source.eval(t) * 3.0 - source.eval(t + 2.0 * d)) / (2.0 * d)
    } else {
        (source.eval(t + d) - source.eval(t - d)) / (2.0 * d)
    }
}

fn node_derivatives(traj: &Trajectory) -> Vec<DMatrix<f64>> {
    let h = traj.grid.h();
    let v: Vec<&DMatrix<f64>> = traj.values.iter().map(|m| m.as_matrix()).collect();
    let m = v.len() - 1;
    (0..=m)
        .map(|i| {
            if m < 2 {
                (v[m] - v[0]) / (m as f64 * h)
            } else if i == 0 {
                (v[1] * 4.0 - v[0] * 3.0 - v[2]) / (2.0 * h)
            } else if i == m {
                (v[m] * 3.0 - v[m - 1] * 4.0 + v[m - 2]) / (2.0 * h)
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// Checks the once-differentiated equation
///
/// ```text
/// M̄′(T) = L₁(T) + e^{−νT} M′(T) + ν ∫₀ᵀ M(T − t) M̄′(t) e^{−ν(T−t)} dt,
/// L₁(T) = ν e^{−νT} M(T) (M̄(0) − 1),
/// ```
///
/// with `M̄′` from finite differences of the trajectory. Returns the largest
/// entrywise residual over the nodes.
pub fn derivative_consistency<S: EvolutionSource + ?Sized>(
    source: &S,
    traj: &Trajectory,
    cfg: &SolverConfig,
    k: usize,
) -> Result<f64, VolterraError> {
    if k != 1 {
        return Err(VolterraError::UnsupportedOrder(k));
    }
    if source.dim() != traj.dim() {
        return Err(VolterraError::DimensionMismatch {
            expected: traj.dim(),
            found: source.dim(),
        });
    }
    let grid = traj.grid;
    let nu = cfg.nu;
    let n = traj.dim();
    let dbar = node_derivatives(traj);
    let samples: Vec<DMatrix<f64>> = grid.nodes().map(|t| source.eval(t)).collect();
    let start_defect = traj.values[0].as_matrix() - DMatrix::<f64>::identity(n, n);
    let weights = PoissonWeights::new(nu, &grid);

    let mut worst = 0.0f64;
    for i in 0..=grid.steps {
        let t = grid.node(i);
        let decay = weights.forcing(i);
        let mut rhs =
            &source_derivative(source, t) * decay + &samples[i] * &start_defect * (nu * decay);
        let mut prev_near = 0.0;
        for j in 0..i {
            let (far, near) = weights.panel(i, j);
            rhs += &samples[i - j] * &dbar[j] * (far + prev_near);
            prev_near = near;
        }
        if i > 0 {
            rhs += &samples[0] * &dbar[i] * prev_near;
        }
        worst = worst.max(max_abs(&(&dbar[i] - rhs)));
    }
    Ok(worst)
}
