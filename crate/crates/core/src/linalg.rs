//! Streaming covariance, symmetric eigenbasis extraction and orthonormal
//! bases.
//!
//! All accumulation happens in `f64`. Chunks are folded in with the pairwise
//! (Chan et al.) update, so a chunk of one row is the classic Welford step and
//! larger chunks reuse a dense Gram product.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::MatrixView;

/// Running mean and centered co-moment of a stream of `d`-dimensional rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    /// Row-major `dim × dim` sum of centered outer products.
    comoment: Vec<f64>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn comoment(&self) -> &[f64] {
        &self.comoment
    }

    /// Folds a block of `f32` rows into the accumulator.
    pub fn accumulate<'a>(&mut self, rows: impl Into<MatrixView<'a>>) -> Result<()> {
        let rows = rows.into();
        if rows.ncols() != self.dim {
            return Err(Error::dim("accumulate row width", self.dim, rows.ncols()));
        }
        if rows.nrows() == 0 {
            return Ok(());
        }
        let block = DMatrix::from_row_iterator(
            rows.nrows(),
            rows.ncols(),
            rows.as_slice().iter().map(|&x| f64::from(x)),
        );
        self.accumulate_block(block);
        Ok(())
    }

    /// Folds a block of `f64` rows (row-major, `dim` columns).
    pub fn accumulate_f64(&mut self, rows: &[f64]) -> Result<()> {
        if self.dim == 0 || !rows.len().is_multiple_of(self.dim) {
            return Err(Error::dim("accumulate_f64 row width", self.dim, rows.len()));
        }
        let n = rows.len() / self.dim;
        if n == 0 {
            return Ok(());
        }
        self.accumulate_block(DMatrix::from_row_slice(n, self.dim, rows));
        Ok(())
    }

    fn accumulate_block(&mut self, mut block: DMatrix<f64>) {
        let n = block.nrows();
        let d = self.dim;
        let mean: Vec<f64> = block.column_iter().map(|c| c.sum() / n as f64).collect();
        for (mut col, m) in block.column_iter_mut().zip(&mean) {
            col.add_scalar_mut(-m);
        }
        let gram = block.tr_mul(&block);
        let mut comoment = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = 0.5 * (gram[(i, j)] + gram[(j, i)]);
                comoment[i * d + j] = v;
                comoment[j * d + i] = v;
            }
        }
        let chunk = CovarianceAccumulator {
            dim: d,
            count: n as u64,
            mean,
            comoment,
        };
        self.merge_unchecked(&chunk);
    }

    /// Combines two accumulators as if their row streams were concatenated.
    pub fn merge(&mut self, other: &CovarianceAccumulator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::dim("merge dims", self.dim, other.dim));
        }
        self.merge_unchecked(other);
        Ok(())
    }

    pub fn merged(mut self, other: &CovarianceAccumulator) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    fn merge_unchecked(&mut self, other: &CovarianceAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.clone_from(other);
            return;
        }
        let d = self.dim;
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta: Vec<f64> = other
            .mean
            .iter()
            .zip(&self.mean)
            .map(|(b, a)| b - a)
            .collect();
        let w = na * nb / n;
        for i in 0..d {
            for j in i..d {
                let v = self.comoment[i * d + j] + other.comoment[i * d + j] + w * delta[i] * delta[j];
                self.comoment[i * d + j] = v;
                self.comoment[j * d + i] = v;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.count += other.count;
    }

    /// Sample covariance with `1/(n−1)` normalization; `None` below two rows.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        if self.count < 2 {
            return None;
        }
        let scale = 1.0 / (self.count as f64 - 1.0);
        Some(DMatrix::from_row_iterator(
            self.dim,
            self.dim,
            self.comoment.iter().map(|&x| x * scale),
        ))
    }
}

/// Orthonormal rows in descending eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    dim: usize,
    /// Row-major `len × dim`.
    vectors: Vec<f64>,
    eigenvalues: Vec<f64>,
}

/// Maximum tolerated `‖VVᵀ − I‖_F` for externally supplied bases.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-5;

impl SpectralBasis {
    /// Builds a basis from rows that must already be orthonormal. The sign
    /// convention is applied; eigenvalues must be nonincreasing.
    pub fn from_rows(dim: usize, vectors: Vec<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        if dim == 0 && !vectors.is_empty() {
            return Err(Error::dim("basis dim", 1, 0));
        }
        if vectors.len() != eigenvalues.len() * dim {
            return Err(Error::dim("basis vector block", eigenvalues.len() * dim, vectors.len()));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("eigenvalues must be nonincreasing".into()));
        }
        let mut basis = Self {
            dim,
            vectors,
            eigenvalues: eigenvalues.into_iter().map(|x| x.max(0.0)).collect(),
        };
        let err = basis.orthonormality_error();
        if err.is_nan() || err >= ORTHONORMALITY_TOLERANCE {
            return Err(Error::NotOrthonormal { error: err });
        }
        basis.apply_sign_convention();
        Ok(basis)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
            eigenvalues: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Rows `start..end`, keeping order and eigenvalues.
    pub fn slice(&self, start: usize, end: usize) -> SpectralBasis {
        SpectralBasis {
            dim: self.dim,
            vectors: self.vectors[start * self.dim..end * self.dim].to_vec(),
            eigenvalues: self.eigenvalues[start..end].to_vec(),
        }
    }

    /// `‖VVᵀ − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.len();
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                sum += (dot - target).powi(2);
            }
        }
        sum.sqrt()
    }

    fn apply_sign_convention(&mut self) {
        let d = self.dim;
        for row in self.vectors.chunks_exact_mut(d.max(1)) {
            if needs_flip(row) {
                row.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }

    /// Coordinates of `x` in this basis.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// A row is flipped when its largest-magnitude entry (lowest index on ties)
/// is negative.
fn needs_flip(row: &[f64]) -> bool {
    let mut best = 0usize;
    for (i, x) in row.iter().enumerate() {
        if x.abs() > row[best].abs() {
            best = i;
        }
    }
    row.get(best).is_some_and(|&x| x < 0.0)
}

/// Relative Frobenius asymmetry `‖A − Aᵀ‖_F / ‖A‖_F`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

/// Top-`k` eigenpairs of a symmetric matrix, descending, with the sign
/// convention applied and eigenvalues clamped at zero.
pub fn top_eigenbasis(cov: &DMatrix<f64>, k: usize) -> Result<SpectralBasis> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::dim("covariance must be square", d, cov.ncols()));
    }
    if k < 1 || k > d {
        return Err(Error::KOutOfRange { k, min: 1, max: d });
    }
    let asym = asymmetry(cov);
    if asym.is_nan() || asym > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let sym = 0.5 * (cov + cov.transpose());
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..d).collect();
    // Stable sort keeps the solver's order among equal eigenvalues.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = Vec::with_capacity(k * d);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        let norm = col.norm();
        let mut row: Vec<f64> = col.iter().map(|x| x / norm).collect();
        if needs_flip(&row) {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.extend(row);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(SpectralBasis {
        dim: d,
        vectors,
        eigenvalues,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::EmbeddingMatrix;

    #[test]
    fn two_opposite_rows() {
        let rows = EmbeddingMatrix::new(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let mut acc = CovarianceAccumulator::new(2);
        acc.accumulate(&rows).unwrap();
        assert_eq!(acc.mean(), &[0.0, 0.0]);
        assert_eq!(acc.comoment(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_rows_is_identity() {
        let mut acc = CovarianceAccumulator::new(3);
        acc.accumulate(&EmbeddingMatrix::new(2, 3, vec![1., 2., 3., 4., 5., 7.]).unwrap())
            .unwrap();
        let before = acc.clone();
        acc.accumulate(&EmbeddingMatrix::zeros(0, 3)).unwrap();
        assert_eq!(acc, before);
    }

    #[test]
    fn constant_rows_have_zero_comoment() {
        let rows = EmbeddingMatrix::from_rows(&vec![vec![0.3f32, -2.0, 7.5]; 9]).unwrap();
        let mut acc = CovarianceAccumulator::new(3);
        for r in rows.rows() {
            acc.accumulate(MatrixView::new(1, 3, r).unwrap()).unwrap();
        }
        assert!(acc.comoment().iter().all(|&x| x.abs() < 1e-12));
        assert_eq!(acc.count(), 9);
    }

    #[test]
    fn width_mismatch() {
        let mut acc = CovarianceAccumulator::new(3);
        let err = acc.accumulate(&EmbeddingMatrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
        assert!(acc.merge(&CovarianceAccumulator::new(4)).is_err());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let mut acc = CovarianceAccumulator::new(2);
        acc.accumulate(&EmbeddingMatrix::new(3, 2, vec![1., 2., 0., 1., 4., 4.]).unwrap())
            .unwrap();
        let merged = acc.clone().merged(&CovarianceAccumulator::new(2)).unwrap();
        assert_eq!(merged, acc);
        let merged = CovarianceAccumulator::new(2).merged(&acc).unwrap();
        assert_eq!(merged, acc);
    }

    #[test]
    fn diagonal_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let b = top_eigenbasis(&cov, 1).unwrap();
        assert_eq!(b.eigenvalues().len(), 1);
        assert!((b.eigenvalues()[0] - 4.0).abs() < 1e-12);
        assert!((b.row(0)[0] - 1.0).abs() < 1e-12 && b.row(0)[1].abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hand_eigendecomposition() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let b = top_eigenbasis(&cov, 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.eigenvalues()[0] - 3.0).abs() < 1e-12);
        assert!((b.eigenvalues()[1] - 1.0).abs() < 1e-12);
        assert!((b.row(0)[0] - s).abs() < 1e-12 && (b.row(0)[1] - s).abs() < 1e-12);
        // Tie in magnitude: lowest index must be positive.
        assert!((b.row(1)[0] - s).abs() < 1e-12 && (b.row(1)[1] + s).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_k_and_asymmetry() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(top_eigenbasis(&cov, 1), Err(Error::NotSymmetric { .. })));
        let cov = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(top_eigenbasis(&cov, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(top_eigenbasis(&cov, 4), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn from_rows_rejects_non_orthonormal() {
        let err = SpectralBasis::from_rows(2, vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotOrthonormal { .. }));
    }

    #[test]
    fn sign_convention_flips_negative_peak() {
        let b = SpectralBasis::from_rows(3, vec![0.0, -0.8, 0.6], vec![1.0]).unwrap();
        assert_eq!(b.row(0), &[0.0, 0.8, -0.6]);
    }
}
