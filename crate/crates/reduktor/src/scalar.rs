//! The scalar reduction `M(t) = α(t)·1 + (1 − α(t))·Θ`, for which the averaged
//! evolution stays in the same family, `M̄(t) = β(t)·1 + (1 − β(t))·Θ`, with
//!
//! ```text
//! β(T) = e^{−νT} α(T) + ν ∫₀ᵀ α(T − t) β(t) e^{−ν(T−t)} dt.
//! ```

use nalgebra::{Complex, DMatrix};
use thiserror::Error;

use crate::dstoch::DStochMatrix;
use crate::source::EvolutionSource;
use crate::volterra::engine::{self, PoissonWeights, Samples};
use crate::volterra::{TimeGrid, Trajectory, VolterraError};

type C64 = Complex<f64>;

/// β may leave `[0, 1]` by at most this much.
pub const TOL_RANGE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalarError {
    #[error("invalid scalar input: {0}")]
    InvalidInput(String),
    #[error("beta = {value} at node {node} leaves [0, 1]")]
    ValueEscape { node: usize, value: f64 },
    #[error("grid step {h} does not divide the switching interval {tau}")]
    MisalignedGrid { tau: f64, h: f64 },
    #[error("reconstructed beta has imaginary part {imag:e} at t = {t}")]
    NonRealReconstruction { t: f64, imag: f64 },
    #[error("lift needs n >= 2, got {0}")]
    LiftDimension(usize),
    #[error(transparent)]
    Grid(#[from] VolterraError),
}

/// The weight `α(t) ∈ [0, 1]` of the identity in `M(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarInput {
    Constant(f64),
    /// `α = pattern[k mod len]` on `[kτ, (k+1)τ)`.
    Piecewise {
        tau: f64,
        pattern: Vec<f64>,
    },
    /// `α(t) = mean + amplitude·cos t`.
    Trig {
        mean: f64,
        amplitude: f64,
    },
    /// Linear interpolation, constant beyond the end points.
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

fn check_unit(v: f64, what: &str) -> Result<(), ScalarError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ScalarError::InvalidInput(format!(
            "{what} = {v} is outside [0, 1]"
        )))
    }
}

impl ScalarInput {
    /// The input of the switching example: 1, 0, 1, 0, ... on intervals of length `tau`.
    pub fn alternating(tau: f64) -> Self {
        Self::Piecewise {
            tau,
            pattern: vec![1.0, 0.0],
        }
    }

    /// `α(t) = 1/2 + cos(t)/2`.
    pub fn half_cosine() -> Self {
        Self::Trig {
            mean: 0.5,
            amplitude: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ScalarError> {
        match self {
            Self::Constant(c) => check_unit(*c, "constant"),
            Self::Piecewise { tau, pattern } => {
                if !(*tau > 0.0 && tau.is_finite()) {
                    return Err(ScalarError::InvalidInput(format!(
                        "tau must be positive, got {tau}"
                    )));
                }
                if pattern.is_empty() {
                    return Err(ScalarError::InvalidInput("empty pattern".into()));
                }
                pattern
                    .iter()
                    .try_for_each(|&v| check_unit(v, "pattern value"))
            }
            Self::Trig { mean, amplitude } => {
                check_unit(mean - amplitude.abs(), "minimum")?;
                check_unit(mean + amplitude.abs(), "maximum")
            }
            Self::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(ScalarError::InvalidInput(
                        "tabulated input needs equally many times and values".into(),
                    ));
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(ScalarError::InvalidInput(
                        "times must increase strictly".into(),
                    ));
                }
                values
                    .iter()
                    .try_for_each(|&v| check_unit(v, "tabulated value"))
            }
        }
    }

    fn piece(tau: f64, t: f64) -> usize {
        (t / tau + 1e-9).floor().max(0.0) as usize
    }

    /// Right-continuous value.
    pub fn alpha(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Piecewise { tau, pattern } => pattern[Self::piece(*tau, t) % pattern.len()],
            Self::Trig { mean, amplitude } => mean + amplitude * t.cos(),
            Self::Tabulated { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0]
                } else if k == times.len() {
                    values[k - 1]
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    values[k - 1] + w * (values[k] - values[k - 1])
                }
            }
        }
    }

    /// `Some(α(t⁻))` when α switches at `t > 0`.
    pub fn left_limit(&self, t: f64) -> Option<f64> {
        match self {
            Self::Piecewise { tau, pattern } => {
                let x = t / tau;
                let k = x.round();
                ((x - k).abs() < 1e-9 && k >= 1.0)
                    .then(|| pattern[(k as usize - 1) % pattern.len()])
            }
            _ => None,
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, Self::Piecewise { .. })
    }
}

/// A jump of β: value just before and at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub t: f64,
    pub left: f64,
    pub right: f64,
}

impl Jump {
    pub fn size(&self) -> f64 {
        self.right - self.left
    }
}

/// Right-continuous β on a grid plus the jumps it makes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTrajectory {
    pub grid: TimeGrid,
    pub beta: Vec<f64>,
    pub jumps: Vec<Jump>,
}

impl ScalarTrajectory {
    pub fn sup_distance(&self, other: &ScalarTrajectory) -> f64 {
        self.beta
            .iter()
            .zip(&other.beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn at(&self, t: f64) -> Option<f64> {
        self.grid.index_of(t).map(|i| self.beta[i])
    }
}

fn check_alignment(input: &ScalarInput, grid: &TimeGrid) -> Result<(), ScalarError> {
    if let ScalarInput::Piecewise { tau, .. } = input {
        let ratio = tau / grid.h();
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(ScalarError::MisalignedGrid {
                tau: *tau,
                h: grid.h(),
            });
        }
    }
    Ok(())
}

/// Marches the scalar equation with the same scheme as the matrix solver.
/// Switching times of a piecewise input must be grid nodes.
pub fn scalar_march(
    input: &ScalarInput,
    nu: f64,
    grid: &TimeGrid,
) -> Result<ScalarTrajectory, ScalarError> {
    input.validate()?;
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(VolterraError::NegativeRate(nu).into());
    }
    check_alignment(input, grid)?;
    let right: Vec<f64> = grid.nodes().map(|t| input.alpha(t)).collect();
    let left = (!input.is_continuous()).then(|| {
        grid.nodes()
            .enumerate()
            .map(|(i, t)| {
                if i == 0 {
                    right[0]
                } else {
                    input.left_limit(t).unwrap_or(right[i])
                }
            })
            .collect()
    });
    let samples = Samples::from_scalars(right, left);
    let out = engine::march(&samples, &PoissonWeights::new(nu, grid), grid.steps)
        .map_err(|e| VolterraError::SingularStep(e.0))?;
    let mut jumps = Vec::new();
    for i in 0..=grid.steps {
        let (l, r) = (out.left_at(i)[0], out.right_at(i)[0]);
        for v in [l, r] {
            if !(-TOL_RANGE..=1.0 + TOL_RANGE).contains(&v) {
                return Err(ScalarError::ValueEscape { node: i, value: v });
            }
        }
        if l != r {
            jumps.push(Jump {
                t: grid.node(i),
                left: l,
                right: r,
            });
        }
    }
    let beta = (0..=grid.steps).map(|i| out.right_at(i)[0]).collect();
    Ok(ScalarTrajectory {
        grid: *grid,
        beta,
        jumps,
    })
}

/// `β·1 + (1 − β)·Θ_n` in the dimension-`n` family.
pub fn lift_value(beta: f64, n: usize) -> DMatrix<f64> {
    let off = (1.0 - beta) / n as f64;
    DMatrix::from_fn(n, n, |i, j| if i == j { beta + off } else { off })
}

/// Lifts every node of a scalar trajectory to `n x n`.
pub fn lift_scalar(traj: &ScalarTrajectory, n: usize) -> Result<Trajectory, ScalarError> {
    if n < 2 {
        return Err(ScalarError::LiftDimension(n));
    }
    let values = traj
        .beta
        .iter()
        .enumerate()
        .map(|(node, &b)| {
            crate::dstoch::validate_dstoch(lift_value(b, n), crate::volterra::TOL_TRAJ).map_err(
                |source| ScalarError::Grid(VolterraError::ValidationFailure { node, source }),
            )
        })
        .collect::<Result<Vec<DStochMatrix>, _>>()?;
    Ok(Trajectory {
        grid: traj.grid,
        values,
    })
}

/// The matrix source `α(t)·1 + (1 − α(t))·Θ_n`.
#[derive(Debug, Clone)]
pub struct LiftedSource {
    pub input: ScalarInput,
    pub n: usize,
}

impl EvolutionSource for LiftedSource {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, t: f64) -> DMatrix<f64> {
        lift_value(self.input.alpha(t), self.n)
    }
    fn left_limit(&self, t: f64) -> Option<DMatrix<f64>> {
        self.input.left_limit(t).map(|a| lift_value(a, self.n))
    }
    fn is_continuous(&self) -> bool {
        self.input.is_continuous()
    }
}

/// Switching input 1, 0, 1, 0, ... solved interval by interval.
///
/// On `[0, τ)` β = 1 and on `[τ, 2τ)` β = 1 + (ντ − νT − 1)e^{−ντ}. Later
/// intervals follow from the two-lag recurrence
///
/// ```text
/// β′(T + 2τ) = e^{−2ντ} β′(T) − ν e^{−ντ} β(T + τ) + ν e^{−2ντ} β(T),
/// ```
///
/// integrated with RK4 on `steps_per_interval` steps, the lagged values at
/// half steps taken from cubic Hermite interpolation. At `kτ`, β jumps by
/// `(−1)^k e^{−νkτ}`.
pub fn piecewise_delay_solve(
    tau: f64,
    nu: f64,
    intervals: usize,
    steps_per_interval: usize,
) -> Result<ScalarTrajectory, ScalarError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ScalarError::InvalidInput(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if intervals < 2 {
        return Err(ScalarError::InvalidInput(format!(
            "need at least 2 intervals, got {intervals}"
        )));
    }
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(VolterraError::NegativeRate(nu).into());
    }
    let m = steps_per_interval.max(1);
    let grid = TimeGrid::new(tau * intervals as f64, intervals * m)?;
    let h = tau / m as f64;
    let e1 = (-nu * tau).exp();
    let e2 = e1 * e1;
    let jump =
        |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 } * (-nu * tau * k as f64).exp();

    // per interval: β, β′, β″ at local nodes 0..=m (node m is the left limit)
    let mut b: Vec<Vec<f64>> = Vec::with_capacity(intervals);
    let mut d1: Vec<Vec<f64>> = Vec::with_capacity(intervals);
    let mut d2: Vec<Vec<f64>> = Vec::with_capacity(intervals);
    b.push(vec![1.0; m + 1]);
    d1.push(vec![0.0; m + 1]);
    d2.push(vec![0.0; m + 1]);
    b.push(
        (0..=m)
            .map(|j| 1.0 - (nu * h * j as f64 + 1.0) * e1)
            .collect(),
    );
    d1.push(vec![-nu * e1; m + 1]);
    d2.push(vec![0.0; m + 1]);

    let mid =
        |y: &[f64], d: &[f64], j: usize| 0.5 * (y[j] + y[j + 1]) + h * (d[j] - d[j + 1]) / 8.0;
    for i in 2..intervals {
        let (p1, p2) = (i - 1, i - 2);
        let f = |j: usize| e2 * d1[p2][j] - nu * e1 * b[p1][j] + nu * e2 * b[p2][j];
        let f_mid = |j: usize| {
            e2 * mid(&d1[p2], &d2[p2], j) - nu * e1 * mid(&b[p1], &d1[p1], j)
                + nu * e2 * mid(&b[p2], &d1[p2], j)
        };
        let slope: Vec<f64> = (0..=m).map(f).collect();
        let curv: Vec<f64> = (0..=m)
            .map(|j| e2 * d2[p2][j] - nu * e1 * d1[p1][j] + nu * e2 * d1[p2][j])
            .collect();
        let mut beta = Vec::with_capacity(m + 1);
        beta.push(b[p1][m] + jump(i));
        for j in 0..m {
            let next = beta[j] + h / 6.0 * (slope[j] + 4.0 * f_mid(j) + slope[j + 1]);
            beta.push(next);
        }
        b.push(beta);
        d1.push(slope);
        d2.push(curv);
    }

    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut jumps = Vec::with_capacity(intervals);
    for (i, beta) in b.iter().enumerate() {
        values.extend_from_slice(&beta[..m]);
        if i > 0 {
            jumps.push(Jump {
                t: grid.node(i * m),
                left: b[i - 1][m],
                right: beta[0],
            });
        }
    }
    let left = b[intervals - 1][m];
    let right = left + jump(intervals);
    values.push(right);
    jumps.push(Jump {
        t: grid.t_max,
        left,
        right,
    });
    Ok(ScalarTrajectory {
        grid,
        beta: values,
        jumps,
    })
}

/// State of the cosine-input system: `(a, a′, a″)` real, `(b, b′, b″)` and
/// `(c, c′, c″)` complex with `c` the conjugate partner of `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigState {
    pub a: [f64; 3],
    pub b: [C64; 3],
    pub c: [C64; 3],
}

impl TrigState {
    pub fn initial() -> Self {
        let q = C64::new(0.25, 0.0);
        Self {
            a: [0.5, 0.5, 0.5],
            b: [q, q, C64::new(0.25, -0.25)],
            c: [q, q, C64::new(0.25, 0.25)],
        }
    }

    /// Third derivatives `(a‴, b‴, c‴)` from the constant-coefficient equations.
    pub fn third(&self) -> (f64, C64, C64) {
        let [a, a1, a2] = self.a;
        let [b, b1, b2] = self.b;
        let [c, c1, c2] = self.c;
        let i = C64::i();
        let one = C64::new(1.0, 0.0);
        (
            a2 - a1 + 0.5 * a,
            -(3.0 * i - one) * b2 + 2.0 * (one + i) * b1 - 0.5 * b,
            -(-3.0 * i - one) * c2 + 2.0 * (one - i) * c1 - 0.5 * c,
        )
    }

    fn derivative(&self) -> Self {
        let (a3, b3, c3) = self.third();
        Self {
            a: [self.a[1], self.a[2], a3],
            b: [self.b[1], self.b[2], b3],
            c: [self.c[1], self.c[2], c3],
        }
    }

    fn axpy(&self, w: f64, d: &Self) -> Self {
        let mut out = *self;
        for k in 0..3 {
            out.a[k] += w * d.a[k];
            out.b[k] += d.b[k] * w;
            out.c[k] += d.c[k] * w;
        }
        out
    }

    /// `e^{−t}(a + b e^{it} + c e^{−it})`, not yet checked for being real.
    pub fn reconstruct(&self, t: f64) -> C64 {
        let phase = C64::new(0.0, t).exp();
        (C64::new(self.a[0], 0.0) + self.b[0] * phase + self.c[0] / phase) * (-t).exp()
    }
}

fn rk4(s: &TrigState, h: f64) -> TrigState {
    let k1 = s.derivative();
    let k2 = s.axpy(0.5 * h, &k1).derivative();
    let k3 = s.axpy(0.5 * h, &k2).derivative();
    let k4 = s.axpy(h, &k3).derivative();
    s.axpy(h / 6.0, &k1)
        .axpy(h / 3.0, &k2)
        .axpy(h / 3.0, &k3)
        .axpy(h / 6.0, &k4)
}

/// Integrates the cosine-input system (ν = 1) with RK4, returning the state
/// at every grid node. Steps are subdivided to at most `1e-3`.
pub fn trig_ode_states(grid: &TimeGrid) -> Vec<TrigState> {
    let sub = (grid.h() / 1e-3).ceil().max(1.0) as usize;
    let dt = grid.h() / sub as f64;
    let mut s = TrigState::initial();
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(s);
    for _ in 0..grid.steps {
        for _ in 0..sub {
            s = rk4(&s, dt);
        }
        out.push(s);
    }
    out
}

/// β for `α(t) = 1/2 + cos(t)/2`, `ν = 1`, from the equivalent
/// constant-coefficient equations.
pub fn trig_ode_solve(grid: &TimeGrid) -> Result<ScalarTrajectory, ScalarError> {
    let beta = trig_ode_states(grid)
        .iter()
        .zip(grid.nodes())
        .map(|(s, t)| {
            let z = s.reconstruct(t);
            if z.im.abs() > TOL_RANGE {
                Err(ScalarError::NonRealReconstruction { t, imag: z.im })
            } else {
                Ok(z.re)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScalarTrajectory {
        grid: *grid,
        beta,
        jumps: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_validation() {
        assert!(ScalarInput::Constant(1.2).validate().is_err());
        assert!(ScalarInput::Trig {
            mean: 0.5,
            amplitude: 0.6
        }
        .validate()
        .is_err());
        assert!(ScalarInput::half_cosine().validate().is_ok());
        assert!(ScalarInput::Piecewise {
            tau: 0.0,
            pattern: vec![1.0]
        }
        .validate()
        .is_err());
        assert!(ScalarInput::Tabulated {
            times: vec![0.0, 0.0],
            values: vec![0.1, 0.2]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn piecewise_values_and_limits() {
        let a = ScalarInput::alternating(0.5);
        assert_eq!(a.alpha(0.0), 1.0);
        assert_eq!(a.alpha(0.49), 1.0);
        assert_eq!(a.alpha(0.5), 0.0);
        assert_eq!(a.alpha(1.0), 1.0);
        assert_eq!(a.left_limit(0.5), Some(1.0));
        assert_eq!(a.left_limit(1.0), Some(0.0));
        assert_eq!(a.left_limit(0.7), None);
        assert_eq!(a.left_limit(0.0), None);
        let tab = ScalarInput::Tabulated {
            times: vec![0.0, 1.0],
            values: vec![0.2, 0.4],
        };
        assert!((tab.alpha(0.5) - 0.3).abs() < 1e-15);
        assert_eq!(tab.alpha(3.0), 0.4);
    }

    #[test]
    fn trivial_inputs() {
        let grid = TimeGrid::new(4.0, 400).unwrap();
        let one = scalar_march(&ScalarInput::Constant(1.0), 1.3, &grid).unwrap();
        assert!(one.beta.iter().all(|b| (b - 1.0).abs() < 1e-14));
        let zero = scalar_march(&ScalarInput::Constant(0.0), 1.3, &grid).unwrap();
        assert!(zero.beta[1..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let grid = TimeGrid::new(3.0, 70).unwrap();
        assert!(matches!(
            scalar_march(&ScalarInput::alternating(1.0), 1.0, &grid),
            Err(ScalarError::MisalignedGrid { .. })
        ));
    }

    #[test]
    fn lift_family_is_closed() {
        for (x, y) in [(0.3, 0.8), (0.0, 0.5), (1.0, 0.2)] {
            let p = lift_value(x, 4) * lift_value(y, 4);
            assert!((p - lift_value(x * y, 4)).amax() < 1e-15);
        }
        assert_eq!(lift_value(1.0, 3), DMatrix::identity(3, 3));
    }

    #[test]
    fn delay_first_intervals() {
        let (tau, nu) = (1.0, 1.0);
        let traj = piecewise_delay_solve(tau, nu, 4, 100).unwrap();
        for (i, t) in traj.grid.nodes().enumerate().take(200) {
            let expect = if t < tau {
                1.0
            } else {
                1.0 + (nu * tau - nu * t - 1.0) * (-nu * tau).exp()
            };
            assert!((traj.beta[i] - expect).abs() < 1e-12, "t = {t}");
        }
        for (k, j) in traj.jumps.iter().enumerate() {
            let k = k + 1;
            let expect = if k % 2 == 0 { 1.0 } else { -1.0 } * (-nu * tau * k as f64).exp();
            assert!((j.size() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn trig_start() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let traj = trig_ode_solve(&grid).unwrap();
        assert_eq!(traj.beta[0], 1.0);
    }
}
