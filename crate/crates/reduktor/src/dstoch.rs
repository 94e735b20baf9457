//! Doubly stochastic matrices, the compression functional and block projectors.

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

/// Default tolerance on row and column sums.
pub const TOL_SUM: f64 = 1e-9;
/// Default tolerance on negative entries.
pub const TOL_ENTRY: f64 = 1e-12;
/// A matrix is treated as having unit compression when `c(M) >= 1 - UNIT_COMPRESSION_TOL`.
pub const UNIT_COMPRESSION_TOL: f64 = 1e-8;
/// Largest dimension for which the exhaustive permutation search is attempted.
pub const EXHAUSTIVE_CAP: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DStochError {
    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("row {row} sums to {sum}")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("column {col} sums to {sum}")]
    ColSumViolation { col: usize, sum: f64 },
    #[error("entry ({row}, {col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("invalid block partition: {0}")]
    InvalidPartition(String),
    #[error("dimension {n} exceeds the exhaustive search cap {cap}")]
    DimensionTooLargeForExhaustive { n: usize, cap: usize },
    #[error("no sample matrices supplied")]
    EmptySampleList,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A real square matrix with nonnegative entries whose rows and columns sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DStochMatrix(DMatrix<f64>);

/// Validates `raw` as a doubly stochastic matrix, using `tol` both for the
/// row/column sums and for the admissible negative excursion of entries.
///
/// Entries within `tol` outside of `[0, 1]` are clamped onto the interval.
pub fn validate_dstoch(raw: DMatrix<f64>, tol: f64) -> Result<DStochMatrix, DStochError> {
    DStochMatrix::validate_with(raw, tol, tol)
}

impl DStochMatrix {
    /// Validates with the default tolerances [`TOL_SUM`] and [`TOL_ENTRY`].
    pub fn new(raw: DMatrix<f64>) -> Result<Self, DStochError> {
        Self::validate_with(raw, TOL_SUM, TOL_ENTRY)
    }

    pub fn validate_with(
        mut raw: DMatrix<f64>,
        tol_sum: f64,
        tol_entry: f64,
    ) -> Result<Self, DStochError> {
        let (rows, cols) = raw.shape();
        if rows != cols {
            return Err(DStochError::NotSquare { rows, cols });
        }
        for row in 0..rows {
            for col in 0..cols {
                let v = raw[(row, col)];
                if v.is_nan() || v < -tol_entry {
                    return Err(DStochError::NegativeEntry { row, col, value: v });
                }
            }
        }
        for row in 0..rows {
            let sum: f64 = raw.row(row).iter().sum();
            if (sum - 1.0).abs() > tol_sum {
                return Err(DStochError::RowSumViolation { row, sum });
            }
        }
        for col in 0..cols {
            let sum: f64 = raw.column(col).iter().sum();
            if (sum - 1.0).abs() > tol_sum {
                return Err(DStochError::ColSumViolation { col, sum });
            }
        }
        for v in raw.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            } else if *v > 1.0 && *v <= 1.0 + tol_entry.max(tol_sum) {
                *v = 1.0;
            }
        }
        Ok(Self(raw))
    }

    /// Wraps a matrix that is doubly stochastic by construction.
    pub(crate) fn from_unchecked(raw: DMatrix<f64>) -> Self {
        debug_assert!(raw.is_square());
        Self(raw)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// The maximal-entropy projector Θ_n with every entry equal to `1/n`.
    pub fn uniform(n: usize) -> Self {
        Self(DMatrix::from_element(n, n, 1.0 / n as f64))
    }

    pub fn permutation(p: &Permutation) -> Self {
        Self(p.to_matrix())
    }

    /// Convex combination `Σ w_k M_k`; weights must be nonnegative and sum to one.
    pub fn convex_combination(items: &[(f64, &DStochMatrix)]) -> Result<Self, DStochError> {
        let n = items
            .first()
            .map(|(_, m)| m.dim())
            .ok_or(DStochError::EmptySampleList)?;
        let mut acc = DMatrix::zeros(n, n);
        for (w, m) in items {
            if m.dim() != n {
                return Err(DStochError::DimensionMismatch {
                    expected: n,
                    found: m.dim(),
                });
            }
            acc += m.as_matrix() * *w;
        }
        Self::new(acc)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Matrix product; the doubly stochastic matrices form a semigroup.
    pub fn compose(&self, rhs: &DStochMatrix) -> DStochMatrix {
        DStochMatrix(&self.0 * &rhs.0)
    }

    pub fn compression(&self) -> f64 {
        compression(self)
    }

    /// Largest row or column sum deviation from one.
    pub fn sum_residual(&self) -> f64 {
        sum_residual(&self.0)
    }
}

impl fmt::Display for DStochMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Largest row or column sum deviation from one of a raw square matrix.
pub fn sum_residual(m: &DMatrix<f64>) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Entrywise sup-norm distance.
pub fn sup_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Orthonormal basis of the zero-sum subspace, as the columns of an
/// `n x (n-1)` matrix (Helmert construction).
pub fn zero_sum_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            q[(i, k - 1)] = 1.0 / norm;
        }
        q[(k, k - 1)] = -(k as f64) / norm;
    }
    q
}

/// Compression `c(M)`: the spectral norm of `M` restricted to the zero-sum
/// subspace, i.e. the largest singular value of `QᵀMQ`.
pub fn compression(m: &DStochMatrix) -> f64 {
    compression_of(m.as_matrix())
}

/// [`compression`] on a raw square matrix that maps the zero-sum subspace to itself.
pub fn compression_of(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n < 2 {
        return 0.0;
    }
    let q = zero_sum_basis(n);
    let restricted = q.transpose() * m * &q;
    restricted
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Largest compression over the principal sub-matrices of the listed blocks.
/// Zero when the partition has no blocks.
pub fn block_compression(m: &DMatrix<f64>, partition: &BlockPartition) -> f64 {
    partition
        .blocks()
        .iter()
        .map(|block| {
            let sub = DMatrix::from_fn(block.len(), block.len(), |i, j| m[(block[i], block[j])]);
            compression_of(&sub)
        })
        .fold(0.0, f64::max)
}

/// A permutation acting on rows: `(P·M)[i][j] = M[perm[i]][j]`, i.e. the
/// matrix of `P` has a one at `(i, perm[i])`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self, DStochError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &k in &map {
            if k >= n || seen[k] {
                return Err(DStochError::InvalidPartition(format!(
                    "{map:?} is not a permutation of 0..{n}"
                )));
            }
            seen[k] = true;
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// The cycle `i -> i + 1 (mod n)` on rows.
    pub fn cyclic_shift(n: usize) -> Self {
        Self((0..n).map(|i| (i + 1) % n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &k)| i == k)
    }

    /// Matrix of `self · other`.
    pub fn then(&self, other: &Permutation) -> Permutation {
        // (P Q)[i][perm_q[perm_p[i]]] = 1
        Permutation(self.0.iter().map(|&k| other.0[k]).collect())
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &k) in self.0.iter().enumerate() {
            inv[k] = i;
        }
        Permutation(inv)
    }

    pub fn pow(&self, k: usize) -> Permutation {
        (0..k).fold(Permutation::identity(self.len()), |acc, _| acc.then(self))
    }

    /// Smallest `k >= 1` with `P^k = 1`.
    pub fn order(&self) -> usize {
        let mut p = self.clone();
        let mut k = 1;
        while !p.is_identity() {
            p = p.then(self);
            k += 1;
        }
        k
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.0.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &k) in self.0.iter().enumerate() {
            m[(i, k)] = 1.0;
        }
        m
    }

    /// `P·M`.
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(self.0[i], j)])
    }

    /// Direct sum `diag(P, P, ...)` with `copies` copies.
    pub fn repeated(&self, copies: usize) -> Permutation {
        let n = self.0.len();
        Permutation(
            (0..copies)
                .flat_map(|c| self.0.iter().map(move |&k| c * n + k))
                .collect(),
        )
    }

    /// All permutations of `0..n` in Heap's order.
    pub fn all(n: usize) -> Vec<Permutation> {
        let mut out = Vec::new();
        let mut a: Vec<usize> = (0..n).collect();
        let mut c = vec![0usize; n];
        out.push(Permutation(a.clone()));
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    a.swap(0, i);
                } else {
                    a.swap(c[i], i);
                }
                out.push(Permutation(a.clone()));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        out
    }
}

/// Disjoint index blocks (each of size at least two) plus the identity sector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
    id_sector: Vec<usize>,
}

impl BlockPartition {
    pub fn new(
        blocks: Vec<Vec<usize>>,
        id_sector: Vec<usize>,
        n: usize,
    ) -> Result<Self, DStochError> {
        let mut seen = vec![false; n];
        let mut mark = |k: usize| -> Result<(), DStochError> {
            if k >= n {
                return Err(DStochError::InvalidPartition(format!(
                    "index {k} out of range for dimension {n}"
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(DStochError::InvalidPartition(format!(
                    "index {k} listed twice"
                )));
            }
            Ok(())
        };
        for block in &blocks {
            if block.len() < 2 {
                return Err(DStochError::InvalidPartition(format!(
                    "block {block:?} has fewer than two indices"
                )));
            }
            for &k in block {
                mark(k)?;
            }
        }
        for &k in &id_sector {
            mark(k)?;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(DStochError::InvalidPartition(format!(
                "index {k} is not covered"
            )));
        }
        let mut blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        blocks.sort();
        let mut id_sector = id_sector;
        id_sector.sort_unstable();
        Ok(Self { blocks, id_sector })
    }

    /// Builds a partition from arbitrary components; singletons go to the identity sector.
    pub fn from_components(components: Vec<Vec<usize>>, n: usize) -> Result<Self, DStochError> {
        let (blocks, singles): (Vec<_>, Vec<_>) = components.into_iter().partition(|c| c.len() > 1);
        Self::new(blocks, singles.into_iter().flatten().collect(), n)
    }

    pub fn single_block(n: usize) -> Self {
        if n < 2 {
            return Self {
                blocks: vec![],
                id_sector: (0..n).collect(),
            };
        }
        Self {
            blocks: vec![(0..n).collect()],
            id_sector: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum::<usize>() + self.id_sector.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn id_sector(&self) -> &[usize] {
        &self.id_sector
    }

    pub fn is_single_block(&self) -> bool {
        self.blocks.len() == 1 && self.id_sector.is_empty()
    }
}

/// Block-diagonal projector: uniform `1/|block|` inside every block and the
/// identity on the identity sector.
pub fn theta_of(partition: &BlockPartition, n: usize) -> Result<DStochMatrix, DStochError> {
    if partition.dim() != n {
        return Err(DStochError::InvalidPartition(format!(
            "partition covers {} indices, expected {n}",
            partition.dim()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    for block in partition.blocks() {
        let w = 1.0 / block.len() as f64;
        for &i in block {
            for &j in block {
                m[(i, j)] = w;
            }
        }
    }
    for &k in partition.id_sector() {
        m[(k, k)] = 1.0;
    }
    Ok(DStochMatrix::from_unchecked(m))
}

/// Connected components of the symmetrised graph with an edge `i ~ j`
/// whenever `adjacent(i, j)`; components are sorted by their smallest index.
fn components(n: usize, adjacent: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && adjacent(i, j) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// A permutation `perm` with `m[perm[i]][i] > tol` for every column `i`
/// (a perfect matching in the support), preferring the diagonal.
fn support_matching(m: &DMatrix<f64>, tol: f64) -> Option<Permutation> {
    let n = m.nrows();
    // row_of[col] = row, col_of[row] = col
    let mut row_of = vec![usize::MAX; n];
    let mut col_of = vec![usize::MAX; n];
    for i in 0..n {
        if m[(i, i)] > tol {
            row_of[i] = i;
            col_of[i] = i;
        }
    }
    fn augment(
        m: &DMatrix<f64>,
        tol: f64,
        col: usize,
        visited: &mut [bool],
        row_of: &mut [usize],
        col_of: &mut [usize],
    ) -> bool {
        for row in 0..m.nrows() {
            if m[(row, col)] > tol && !visited[row] {
                visited[row] = true;
                if col_of[row] == usize::MAX
                    || augment(m, tol, col_of[row], visited, row_of, col_of)
                {
                    row_of[col] = row;
                    col_of[row] = col;
                    return true;
                }
            }
        }
        false
    }
    for col in 0..n {
        if row_of[col] == usize::MAX {
            let mut visited = vec![false; n];
            if !augment(m, tol, col, &mut visited, &mut row_of, &mut col_of) {
                return None;
            }
        }
    }
    Some(Permutation(row_of))
}

fn decomposition_under(m: &DMatrix<f64>, p: &Permutation, tol: f64) -> Option<BlockPartition> {
    let pm = p.apply_rows(m);
    let comps = components(pm.nrows(), |i, j| pm[(i, j)] > tol);
    if comps.len() < 2 {
        return None;
    }
    BlockPartition::from_components(comps, pm.nrows()).ok()
}

/// Searches for a permutation `P` such that `P·M` is block decomposable.
///
/// Returns `None` when `c(M) < 1 - tol`. Otherwise the permutation is first
/// taken from a perfect matching in the support of `M` (any such permutation
/// appears in some Birkhoff decomposition of `M`); if that fails the search
/// falls back to all permutations, which is only attempted up to
/// [`EXHAUSTIVE_CAP`].
pub fn decomposability_witness(
    m: &DStochMatrix,
    tol: f64,
) -> Result<Option<(Permutation, BlockPartition)>, DStochError> {
    let n = m.dim();
    if n < 2 || compression(m) < 1.0 - tol {
        return Ok(None);
    }
    let raw = m.as_matrix();
    if let Some(p) = support_matching(raw, tol) {
        if let Some(part) = decomposition_under(raw, &p, tol) {
            return Ok(Some((p, part)));
        }
    }
    if n > EXHAUSTIVE_CAP {
        return Err(DStochError::DimensionTooLargeForExhaustive {
            n,
            cap: EXHAUSTIVE_CAP,
        });
    }
    Ok(Permutation::all(n)
        .into_iter()
        .find_map(|p| decomposition_under(raw, &p, tol).map(|part| (p, part))))
}

/// Connected components of the union of the supports (entries above `tol`)
/// of all samples; singleton components form the identity sector.
pub fn support_blocks(samples: &[DStochMatrix], tol: f64) -> Result<BlockPartition, DStochError> {
    let n = samples.first().ok_or(DStochError::EmptySampleList)?.dim();
    if let Some(bad) = samples.iter().find(|s| s.dim() != n) {
        return Err(DStochError::DimensionMismatch {
            expected: n,
            found: bad.dim(),
        });
    }
    let comps = components(n, |i, j| {
        samples
            .iter()
            .any(|s| s.as_matrix()[(i, j)] > tol || s.as_matrix()[(j, i)] > tol)
    });
    BlockPartition::from_components(comps, n)
}
