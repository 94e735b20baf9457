//! Kraus families and doubly stochastic evolution maps generated by a
//! system–bath model.
//!
//! The joint generator is the `(n·n2) x (n·n2)` Hermitian matrix assembled
//! from the `n x n` blocks `B_ab`; the Kraus operators are its propagator
//! blocks scaled by `1/sqrt(n2)`, and
//!
//! ```text
//! M_ij(t) = Σ_ab |<i| A_ab(t) |j>|²
//! ```
//!
//! in the measurement basis `{|i>}`.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::dstoch::{compression, validate_dstoch, DStochMatrix};
use crate::source::EvolutionSource;

pub type C64 = Complex<f64>;

/// Hermiticity tolerance for the blocks `B_ab = B_ba†`.
pub const TOL_HERMITIAN: f64 = 1e-12;
/// Unitarity tolerance for the measurement basis.
pub const TOL_UNITARY: f64 = 1e-10;
/// Off-diagonal elements below this modulus count as vanishing.
pub const TOL_OFFDIAG: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("blocks ({a},{b}) and ({b},{a}) are not adjoint (residual {residual:e})")]
    NonHermitianModel { a: usize, b: usize, residual: f64 },
    #[error("measurement basis is not unitary (residual {residual:e})")]
    NonUnitaryBasis { residual: f64 },
    #[error("block index ({a},{b}) out of range for bath dimension {n2}")]
    BlockIndexOutOfRange { a: usize, b: usize, n2: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty time grid")]
    EmptyGrid,
}

/// Hermitian block family `{B_ab}` with system dimension `n`, bath dimension
/// `n2` and a measurement basis (columns of a unitary matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct BathModel {
    n: usize,
    n2: usize,
    blocks: Vec<DMatrix<C64>>,
    basis: DMatrix<C64>,
}

fn adjoint_residual(x: &DMatrix<C64>, y: &DMatrix<C64>) -> f64 {
    (x - y.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn unitarity_residual(u: &DMatrix<C64>) -> f64 {
    let n = u.nrows();
    (u.adjoint() * u - DMatrix::<C64>::identity(n, n))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

impl BathModel {
    /// `blocks[a * n2 + b]` holds `B_ab`. Without a basis the computational
    /// basis is used.
    pub fn new(
        n: usize,
        n2: usize,
        blocks: Vec<DMatrix<C64>>,
        basis: Option<DMatrix<C64>>,
    ) -> Result<Self, ChannelError> {
        if n == 0 || n2 == 0 {
            return Err(ChannelError::Shape("dimensions must be positive".into()));
        }
        if blocks.len() != n2 * n2 {
            return Err(ChannelError::Shape(format!(
                "expected {} blocks, found {}",
                n2 * n2,
                blocks.len()
            )));
        }
        if let Some(bad) = blocks.iter().find(|b| b.shape() != (n, n)) {
            return Err(ChannelError::Shape(format!(
                "block has shape {:?}, expected ({n}, {n})",
                bad.shape()
            )));
        }
        for a in 0..n2 {
            for b in a..n2 {
                let residual = adjoint_residual(&blocks[a * n2 + b], &blocks[b * n2 + a]);
                if residual > TOL_HERMITIAN {
                    return Err(ChannelError::NonHermitianModel { a, b, residual });
                }
            }
        }
        let model = Self {
            n,
            n2,
            blocks,
            basis: DMatrix::identity(n, n),
        };
        match basis {
            Some(basis) => model.with_basis(basis),
            None => Ok(model),
        }
    }

    /// Model without a bath (`n2 = 1`, `B_11 = H`).
    pub fn bathless(h: DMatrix<C64>) -> Result<Self, ChannelError> {
        let n = h.nrows();
        Self::new(n, 1, vec![h], None)
    }

    /// Splits a Hermitian joint generator into its `n x n` blocks.
    pub fn from_generator(
        n: usize,
        n2: usize,
        generator: &DMatrix<C64>,
        basis: Option<DMatrix<C64>>,
    ) -> Result<Self, ChannelError> {
        if generator.shape() != (n * n2, n * n2) {
            return Err(ChannelError::Shape(format!(
                "generator has shape {:?}, expected ({1}, {1})",
                generator.shape(),
                n * n2
            )));
        }
        let blocks = (0..n2 * n2)
            .map(|ab| {
                let (a, b) = (ab / n2, ab % n2);
                generator.view((a * n, b * n), (n, n)).into_owned()
            })
            .collect();
        Self::new(n, n2, blocks, basis)
    }

    /// Random model with Gaussian Hermitian generator entries of standard
    /// deviation `scale` and, optionally, a Haar-random measurement basis.
    pub fn random<R: Rng + ?Sized>(
        n: usize,
        n2: usize,
        scale: f64,
        random_basis: bool,
        rng: &mut R,
    ) -> Self {
        let g = random_hermitian(n * n2, scale, rng);
        let basis = random_basis.then(|| random_unitary(n, rng));
        Self::from_generator(n, n2, &g, basis).expect("random generator is Hermitian")
    }

    pub fn with_basis(mut self, basis: DMatrix<C64>) -> Result<Self, ChannelError> {
        if basis.shape() != (self.n, self.n) {
            return Err(ChannelError::Shape(format!(
                "basis has shape {:?}, expected ({1}, {1})",
                basis.shape(),
                self.n
            )));
        }
        let residual = unitarity_residual(&basis);
        if residual > TOL_UNITARY {
            return Err(ChannelError::NonUnitaryBasis { residual });
        }
        self.basis = basis;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn basis(&self) -> &DMatrix<C64> {
        &self.basis
    }

    pub fn block(&self, a: usize, b: usize) -> Result<&DMatrix<C64>, ChannelError> {
        if a >= self.n2 || b >= self.n2 {
            return Err(ChannelError::BlockIndexOutOfRange { a, b, n2: self.n2 });
        }
        Ok(&self.blocks[a * self.n2 + b])
    }

    pub fn blocks(&self) -> &[DMatrix<C64>] {
        &self.blocks
    }

    /// The assembled joint generator.
    pub fn generator(&self) -> DMatrix<C64> {
        let (n, n2) = (self.n, self.n2);
        let mut g = DMatrix::zeros(n * n2, n * n2);
        for a in 0..n2 {
            for b in 0..n2 {
                g.view_mut((a * n, b * n), (n, n))
                    .copy_from(&self.blocks[a * n2 + b]);
            }
        }
        g
    }

    /// Diagonalises the generator once; the propagator evaluates `M(t)` cheaply.
    pub fn propagator(&self) -> Propagator {
        Propagator::new(self.clone())
    }
}

pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> DMatrix<C64> {
    let mut g = DMatrix::<C64>::zeros(dim, dim);
    for i in 0..dim {
        let d: f64 = rng.sample(StandardNormal);
        g[(i, i)] = C64::new(d * scale, 0.0);
        for j in i + 1..dim {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = C64::new(re, im) * (scale / std::f64::consts::SQRT_2);
            g[(i, j)] = z;
            g[(j, i)] = z.conj();
        }
    }
    g
}

/// Haar-random unitary via QR of a complex Gaussian matrix with phase fixing.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<C64> {
    let z = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Kraus operators `A_ab(t)` at one time; `ops[a * n2 + b]` is `A_ab`.
#[derive(Debug, Clone)]
pub struct KrausFamily {
    pub t: f64,
    pub n: usize,
    pub n2: usize,
    pub ops: Vec<DMatrix<C64>>,
}

impl KrausFamily {
    /// `max(‖Σ A A† − 1‖, ‖Σ A† A − 1‖)` in the entrywise max norm.
    pub fn normalization_residual(&self) -> f64 {
        let id = DMatrix::<C64>::identity(self.n, self.n);
        let mut left = DMatrix::<C64>::zeros(self.n, self.n);
        let mut right = DMatrix::<C64>::zeros(self.n, self.n);
        for a in &self.ops {
            left += a * a.adjoint();
            right += a.adjoint() * a;
        }
        let r1 = (left - &id).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let r2 = (right - &id).iter().map(|z| z.norm()).fold(0.0, f64::max);
        r1.max(r2)
    }

    /// `M_ij = Σ_ab |<i|A_ab|j>|²` in the given basis, by direct summation.
    pub fn transition_matrix(&self, basis: &DMatrix<C64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for a in &self.ops {
            let rotated = basis.adjoint() * a * basis;
            for i in 0..self.n {
                for j in 0..self.n {
                    m[(i, j)] += rotated[(i, j)].norm_sqr();
                }
            }
        }
        m
    }
}

/// Eigendecomposition of the joint generator, reused for every time.
#[derive(Debug, Clone)]
pub struct Propagator {
    model: BathModel,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<C64>,
    /// `diag(W, ..., W)†·V` so that rotated blocks come out of one product.
    rotated_vectors: DMatrix<C64>,
    /// `V†·diag(W, ..., W)`.
    rotated_vectors_adj: DMatrix<C64>,
}

impl Propagator {
    pub fn new(model: BathModel) -> Self {
        let eig = SymmetricEigen::new(model.generator());
        let (n, n2) = (model.n, model.n2);
        let mut w = DMatrix::<C64>::zeros(n * n2, n * n2);
        for a in 0..n2 {
            w.view_mut((a * n, a * n), (n, n)).copy_from(&model.basis);
        }
        let rotated_vectors = w.adjoint() * &eig.eigenvectors;
        let rotated_vectors_adj = eig.eigenvectors.adjoint() * &w;
        Self {
            model,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            rotated_vectors,
            rotated_vectors_adj,
        }
    }

    pub fn model(&self) -> &BathModel {
        &self.model
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    fn phases(&self, t: f64) -> impl Iterator<Item = C64> + '_ {
        self.eigenvalues
            .iter()
            .map(move |&l| C64::new(0.0, -l * t).exp())
    }

    /// Joint unitary `exp(-i·G·t)`.
    pub fn unitary(&self, t: f64) -> DMatrix<C64> {
        let mut v = self.eigenvectors.clone();
        for (j, ph) in self.phases(t).enumerate() {
            for i in 0..v.nrows() {
                v[(i, j)] *= ph;
            }
        }
        v * self.eigenvectors.adjoint()
    }

    pub fn kraus_at(&self, t: f64) -> KrausFamily {
        let (n, n2) = (self.model.n, self.model.n2);
        let u = self.unitary(t);
        let scale = 1.0 / (n2 as f64).sqrt();
        let ops = (0..n2 * n2)
            .map(|ab| {
                let (a, b) = (ab / n2, ab % n2);
                u.view((a * n, b * n), (n, n)).into_owned() * C64::new(scale, 0.0)
            })
            .collect();
        KrausFamily { t, n, n2, ops }
    }

    /// Raw transition matrix at time `t`, not yet validated.
    pub fn transition_raw(&self, t: f64) -> DMatrix<f64> {
        let (n, n2) = (self.model.n, self.model.n2);
        if t == 0.0 {
            return DMatrix::identity(n, n);
        }
        let mut v = self.rotated_vectors.clone();
        for (j, ph) in self.phases(t).enumerate() {
            for i in 0..v.nrows() {
                v[(i, j)] *= ph;
            }
        }
        let u = v * &self.rotated_vectors_adj;
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n2 {
            for b in 0..n2 {
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] += u[(a * n + i, b * n + j)].norm_sqr();
                    }
                }
            }
        }
        m / n2 as f64
    }

    pub fn m_of_t(&self, t: f64) -> DStochMatrix {
        validate_dstoch(self.transition_raw(t), 1e-9)
            .expect("a unitary propagator yields a doubly stochastic matrix")
    }
}

impl EvolutionSource for Propagator {
    fn dim(&self) -> usize {
        self.model.n
    }

    fn eval(&self, t: f64) -> DMatrix<f64> {
        self.transition_raw(t)
    }
}

pub fn kraus_at(model: &BathModel, t: f64) -> KrausFamily {
    model.propagator().kraus_at(t)
}

pub fn m_of_t(model: &BathModel, t: f64) -> DStochMatrix {
    model.propagator().m_of_t(t)
}

/// Second-order coefficient of `M(t) = 1 + M₂ t²/2 + O(t³)`:
///
/// ```text
/// (M₂)_jl = (2/n2) ( Σ_ab |<j|B_ab|l>|² − δ_jl Σ_ac <j|B_ac B_ca|j> )
/// ```
pub fn second_order_matrix(model: &BathModel) -> DMatrix<f64> {
    let (n, n2) = (model.n, model.n2);
    let w = &model.basis;
    let rotated: Vec<DMatrix<C64>> = model.blocks.iter().map(|b| w.adjoint() * b * w).collect();
    let mut m2 = DMatrix::zeros(n, n);
    for b in &rotated {
        for j in 0..n {
            for l in 0..n {
                m2[(j, l)] += b[(j, l)].norm_sqr();
            }
        }
    }
    for a in 0..n2 {
        for c in 0..n2 {
            let prod = &rotated[a * n2 + c] * &rotated[c * n2 + a];
            for j in 0..n {
                m2[(j, j)] -= prod[(j, j)].re;
            }
        }
    }
    m2 * (2.0 / n2 as f64)
}

/// True when every off-diagonal element of `B_ab` in the model basis has
/// modulus above [`TOL_OFFDIAG`].
pub fn basis_genericity(
    model: &BathModel,
    which_block: (usize, usize),
) -> Result<bool, ChannelError> {
    let (a, b) = which_block;
    let block = model.block(a, b)?;
    let rotated = model.basis.adjoint() * block * &model.basis;
    let n = model.n;
    Ok((0..n)
        .flat_map(|j| (0..n).map(move |l| (j, l)))
        .filter(|(j, l)| j != l)
        .all(|(j, l)| rotated[(j, l)].norm() > TOL_OFFDIAG))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenericityReport {
    pub generic: bool,
    pub witness_t: f64,
    pub c_min: f64,
    /// `c(M(t))` at every sampled time, in grid order.
    pub samples: Vec<(f64, f64)>,
}

/// Samples `c(M(t))` on the given times; the map is reported generic when
/// some sample is at most `delta_threshold`.
pub fn genericity_check(
    model: &BathModel,
    times: &[f64],
    delta_threshold: f64,
) -> Result<GenericityReport, ChannelError> {
    if times.is_empty() {
        return Err(ChannelError::EmptyGrid);
    }
    let prop = model.propagator();
    let samples: Vec<(f64, f64)> = times
        .par_iter()
        .map(|&t| (t, compression(&prop.m_of_t(t))))
        .collect();
    let (witness_t, c_min) = samples
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, s| {
            if s.1 < best.1 {
                s
            } else {
                best
            }
        });
    Ok(GenericityReport {
        generic: c_min <= delta_threshold && delta_threshold < 1.0,
        witness_t,
        c_min,
        samples,
    })
}

pub fn pauli_x() -> DMatrix<C64> {
    let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    DMatrix::from_row_slice(2, 2, &[z, o, o, z])
}
