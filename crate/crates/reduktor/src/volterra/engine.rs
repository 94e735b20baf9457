//! Marching core shared by the matrix and scalar solvers.
//!
//! Solves `X(T) = a(T) M(T) + ∫₀ᵀ b(t, T) M(T − t) X(t) dt` on a uniform
//! grid. On every panel `[t_j, t_{j+1}]` the smooth factor `M(T − t) X(t)` is
//! replaced by its linear interpolant and integrated against the kernel
//! exactly (Poisson kernel) or by Gauss–Legendre (general kernel). Matrices
//! are stored flat, row-major, `n * n` values per node.

use nalgebra::DMatrix;

use crate::source::EvolutionSource;

use super::TimeGrid;

/// `M` sampled at the grid nodes, with left limits where `M` jumps.
pub(crate) struct Samples {
    pub n: usize,
    pub right: Vec<f64>,
    /// Same layout as `right`; `None` for continuous sources.
    pub left: Option<Vec<f64>>,
}

impl Samples {
    pub fn take<S: EvolutionSource + ?Sized>(source: &S, grid: &TimeGrid) -> Self {
        let n = source.dim();
        let mut right = Vec::with_capacity((grid.steps + 1) * n * n);
        for i in 0..=grid.steps {
            push_row_major(&mut right, &source.eval(grid.node(i)));
        }
        let left = (!source.is_continuous()).then(|| {
            let mut left = Vec::with_capacity(right.len());
            for i in 0..=grid.steps {
                let t = grid.node(i);
                match source.left_limit(t) {
                    Some(m) if i > 0 => push_row_major(&mut left, &m),
                    _ => left.extend_from_slice(&right[i * n * n..(i + 1) * n * n]),
                }
            }
            left
        });
        Self { n, right, left }
    }

    pub fn from_scalars(right: Vec<f64>, left: Option<Vec<f64>>) -> Self {
        Self { n: 1, right, left }
    }

    fn right_at(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.right[i * nn..(i + 1) * nn]
    }

    fn left_at(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        match &self.left {
            Some(l) => &l[i * nn..(i + 1) * nn],
            None => self.right_at(i),
        }
    }
}

pub(crate) fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

pub(crate) fn to_matrix(n: usize, flat: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, flat)
}

/// Quadrature weights of one panel against the kernel.
pub(crate) trait PanelWeights: Sync {
    /// Coefficient `a(T_i)` of the forcing term.
    fn forcing(&self, i: usize) -> f64;
    /// `(far, near)` weights of panel `j` for node `i`: `far` multiplies the
    /// integrand at `t_j`, `near` at `t_{j+1}`.
    fn panel(&self, i: usize, j: usize) -> (f64, f64);
}

/// `∫₀^h ν e^{−νu} (u/h) du` with `x = νh`, accurate for small `x`.
pub(crate) fn exp_far_weight(x: f64) -> f64 {
    if x < 0.5 {
        // Σ_{k≥2} (−1)^k x^{k−1} (k−1)/k!
        let mut sum = 0.0;
        let mut pow_over_fact = x / 2.0; // x^{k-1}/k! at k = 2
        for k in 2..40 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (k - 1) as f64 * pow_over_fact;
            pow_over_fact *= x / (k + 1) as f64;
            if pow_over_fact < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / x
    }
}

/// Poisson kernel `b(t, T) = ν e^{−ν(T−t)}`, `a(T) = e^{−νT}`, integrated exactly.
pub(crate) struct PoissonWeights {
    decay: Vec<f64>,
    far: f64,
    near: f64,
}

impl PoissonWeights {
    pub fn new(nu: f64, grid: &TimeGrid) -> Self {
        let x = nu * grid.h();
        let far = exp_far_weight(x);
        let near = -(-x).exp_m1() - far;
        let decay = (0..=grid.steps).map(|k| (-x * k as f64).exp()).collect();
        Self { decay, far, near }
    }
}

impl PanelWeights for PoissonWeights {
    fn forcing(&self, i: usize) -> f64 {
        self.decay[i]
    }
    fn panel(&self, i: usize, j: usize) -> (f64, f64) {
        let d = self.decay[i - j - 1];
        (d * self.far, d * self.near)
    }
}

const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// General kernel weights by 4-point Gauss–Legendre on every panel.
pub(crate) struct KernelWeights<'a> {
    pub kernel: &'a super::Kernel,
    pub grid: &'a TimeGrid,
}

impl PanelWeights for KernelWeights<'_> {
    fn forcing(&self, i: usize) -> f64 {
        self.kernel.a(self.grid.node(i))
    }
    fn panel(&self, i: usize, j: usize) -> (f64, f64) {
        let big_t = self.grid.node(i);
        let (t0, h) = (self.grid.node(j), self.grid.h());
        let mut far = 0.0;
        let mut near = 0.0;
        for (xi, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
            let s = 0.5 * (1.0 + xi);
            let b = self.kernel.b(t0 + s * h, big_t) * w * 0.5 * h;
            far += b * (1.0 - s);
            near += b * s;
        }
        (far, near)
    }
}

/// `c += w · a · b` for row-major `n x n` blocks.
#[inline]
pub(crate) fn gemm_acc(c: &mut [f64], w: f64, a: &[f64], b: &[f64], n: usize) {
    for r in 0..n {
        for k in 0..n {
            let s = w * a[r * n + k];
            if s == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            let crow = &mut c[r * n..(r + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += s * bv;
            }
        }
    }
}

pub(crate) struct MarchOutput {
    pub n: usize,
    /// Right-continuous values at the nodes.
    pub right: Vec<f64>,
    /// Left limits at the nodes (equal to `right` for continuous inputs).
    pub left: Vec<f64>,
}

impl MarchOutput {
    pub fn right_at(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.right[i * nn..(i + 1) * nn]
    }
    pub fn left_at(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.left[i * nn..(i + 1) * nn]
    }
}

#[derive(Debug)]
pub(crate) struct SingularStep(pub usize);

/// Solves `(I − w M₀) X = rhs` in place.
struct ImplicitSolver {
    n: usize,
    m0: DMatrix<f64>,
    m0_is_identity: bool,
    cached: Option<(f64, DMatrix<f64>)>,
}

impl ImplicitSolver {
    fn new(n: usize, m0: &[f64]) -> Self {
        let m0 = to_matrix(n, m0);
        let m0_is_identity = m0 == DMatrix::identity(n, n);
        Self {
            n,
            m0,
            m0_is_identity,
            cached: None,
        }
    }

    fn solve(&mut self, w: f64, rhs: &mut [f64], node: usize) -> Result<(), SingularStep> {
        if self.m0_is_identity {
            let d = 1.0 - w;
            if d == 0.0 {
                return Err(SingularStep(node));
            }
            rhs.iter_mut().for_each(|v| *v /= d);
            return Ok(());
        }
        let inv = match &self.cached {
            Some((cw, inv)) if *cw == w => inv,
            _ => {
                let a = DMatrix::identity(self.n, self.n) - &self.m0 * w;
                let inv = a.try_inverse().ok_or(SingularStep(node))?;
                &self.cached.insert((w, inv)).1
            }
        };
        let x = inv * to_matrix(self.n, rhs);
        for r in 0..self.n {
            for c in 0..self.n {
                rhs[r * self.n + c] = x[(r, c)];
            }
        }
        Ok(())
    }
}

pub(crate) fn march<W: PanelWeights>(
    samples: &Samples,
    weights: &W,
    steps: usize,
) -> Result<MarchOutput, SingularStep> {
    let n = samples.n;
    let nn = n * n;
    let continuous = samples.left.is_none();
    let mut right = vec![0.0; (steps + 1) * nn];
    let mut left = vec![0.0; (steps + 1) * nn];
    let a0 = weights.forcing(0);
    for (dst, src) in right[..nn].iter_mut().zip(samples.right_at(0)) {
        *dst = a0 * src;
    }
    left[..nn].copy_from_slice(&right[..nn]);

    let mut solver = ImplicitSolver::new(n, samples.right_at(0));
    let mut acc = vec![0.0; nn];
    for i in 1..=steps {
        acc.iter_mut().for_each(|v| *v = 0.0);
        if continuous {
            let mut prev_near = 0.0;
            for j in 0..i {
                let (far, near) = weights.panel(i, j);
                let w = far + prev_near;
                prev_near = near;
                gemm_acc(
                    &mut acc,
                    w,
                    samples.right_at(i - j),
                    &right[j * nn..(j + 1) * nn],
                    n,
                );
            }
        } else {
            for j in 0..i {
                let (far, near) = weights.panel(i, j);
                gemm_acc(
                    &mut acc,
                    far,
                    samples.left_at(i - j),
                    &right[j * nn..(j + 1) * nn],
                    n,
                );
                if j + 1 < i {
                    gemm_acc(
                        &mut acc,
                        near,
                        samples.right_at(i - j - 1),
                        &left[(j + 1) * nn..(j + 2) * nn],
                        n,
                    );
                }
            }
        }
        let a_i = weights.forcing(i);
        let m_left = samples.left_at(i);
        for (v, m) in acc.iter_mut().zip(m_left) {
            *v += a_i * m;
        }
        let (_, implicit) = weights.panel(i, i - 1);
        solver.solve(implicit, &mut acc, i)?;
        left[i * nn..(i + 1) * nn].copy_from_slice(&acc);
        let m_right = samples.right_at(i);
        for k in 0..nn {
            right[i * nn + k] = acc[k] + a_i * (m_right[k] - m_left[k]);
        }
    }
    Ok(MarchOutput { n, right, left })
}
