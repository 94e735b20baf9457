#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reduktor::channel::{pauli_x, BathModel};
use reduktor::dstoch::{validate_dstoch, DStochMatrix};

/// Random model with `n ∈ 2..=4`, `n2 ∈ 1..=3` and a random basis.
pub fn model_from_seed(seed: u64) -> BathModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4);
    let n2 = rng.random_range(1..=3);
    BathModel::random(n, n2, 1.0, true, &mut rng)
}

pub fn sized_model(n: usize, n2: usize, seed: u64) -> BathModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BathModel::random(n, n2, 1.0, true, &mut rng)
}

pub fn sigma_x_model() -> BathModel {
    BathModel::bathless(pauli_x()).unwrap()
}

/// Exact averaged evolution for `M(t) ≡ M`: `exp(ν(M − 1)T)·M`.
pub fn constant_closed_form(m: &DMatrix<f64>, nu: f64, t: f64) -> DMatrix<f64> {
    let n = m.nrows();
    ((m - DMatrix::identity(n, n)) * (nu * t)).exp() * m
}

/// Symmetric doubly stochastic 3x3 matrices used as constant inputs.
pub fn symmetric_constants() -> Vec<DStochMatrix> {
    [
        [0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5],
        [0.1, 0.6, 0.3, 0.6, 0.2, 0.2, 0.3, 0.2, 0.5],
        [0.8, 0.1, 0.1, 0.1, 0.0, 0.9, 0.1, 0.9, 0.0],
    ]
    .iter()
    .map(|v| validate_dstoch(DMatrix::from_row_slice(3, 3, v), 1e-14).unwrap())
    .collect()
}
