//! Independent reference computations for the integration suites.
//!
//! Nothing here calls into the crate's covariance or eigen routines: the
//! covariance is the direct two-pass formula and the eigensolver is a cyclic
//! Jacobi iteration.

#![allow(dead_code)]

use nalgebra::DMatrix;
use ortholens::{EmbeddingMatrix, SpectralBasis};

/// `(1/(n−1)) Σ (x−μ)(x−μ)ᵀ`, two passes, row-major.
pub fn dense_covariance(rows: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    let n = rows.nrows();
    let d = rows.ncols();
    let mut mean = vec![0.0; d];
    for r in rows.rows() {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows.rows() {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(&x, m)| x as f64 - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    for row in cov.iter_mut() {
        row.iter_mut().for_each(|x| *x /= (n - 1) as f64);
    }
    cov
}

pub fn column_mean(rows: &EmbeddingMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; rows.ncols()];
    for r in rows.rows() {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.nrows() as f64);
    mean
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenpairs sorted by descending eigenvalue; vectors are unit rows.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let akp = row[p];
                    let akq = row[q];
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (head, tail) = a.split_at_mut(q);
                for (x, y) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                    let (apk, aqk) = (*x, *y);
                    *x = c * apk - s * aqk;
                    *y = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| (a[j][j], (0..n).map(|i| v[i][j]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs.into_iter().unzip()
}

fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(k, d, |i, j| rows[i][j])
}

pub fn basis_rows(b: &SpectralBasis) -> Vec<Vec<f64>> {
    b.rows().map(<[f64]>::to_vec).collect()
}

/// Cosines of the principal angles between two row spaces, via a full SVD of
/// `U_a U_bᵀ`.
pub fn principal_cosines(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let ua = to_dmatrix(a);
    let ub = to_dmatrix(b);
    let m = &ua * ub.transpose();
    let svd = m.svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Sine of the largest principal angle between two equal-rank row spaces,
/// computed as the spectral norm of `U_b − U_b U_aᵀ U_a`.
pub fn max_principal_sine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let ua = to_dmatrix(a);
    let ub = to_dmatrix(b);
    let resid = &ub - &ub * ua.transpose() * &ua;
    resid.svd(false, false).singular_values.iter().fold(0.0f64, |m, &x| m.max(x))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
