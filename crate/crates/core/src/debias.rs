//! Removal of the leading text directions from vision embeddings.
//!
//! For a manifold with mean `m` and orthonormal rows `k_1..k_K`:
//!
//! ```text
//! z          = Σ_{i≤k} ((v − m)·k_i) k_i
//! v_debiased = v − z
//! ```
//!
//! The map is affine: inputs are centered internally and the output is left
//! at its natural norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::TextManifold;
use crate::matrix::{EmbeddingMatrix, MatrixView, Tensor};
use crate::par;

/// Number of leading components removed by default.
pub const DEFAULT_REMOVED_COMPONENTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebiasConfig {
    pub k: usize,
    /// Decoder layer at which consumers apply the operator; `None` means the
    /// caller decides (typically the projector output).
    pub intervention_layer: Option<usize>,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_REMOVED_COMPONENTS,
            intervention_layer: None,
        }
    }
}

fn check(manifold: &TextManifold, dim: usize, k: usize) -> Result<()> {
    if dim != manifold.dim() {
        return Err(Error::dim("vector vs manifold", manifold.dim(), dim));
    }
    if k > manifold.rank() {
        return Err(Error::KOutOfRange {
            k,
            min: 0,
            max: manifold.rank(),
        });
    }
    Ok(())
}

/// Writes `Σ_{i≤k} ((v − m)·k_i) k_i` into `out`; `centered` is scratch.
fn projection_into(v: impl Iterator<Item = f64>, manifold: &TextManifold, k: usize, centered: &mut [f64], out: &mut [f64]) {
    for ((c, x), m) in centered.iter_mut().zip(v).zip(manifold.mean()) {
        *c = x - m;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for row in manifold.basis().rows().take(k) {
        let coeff: f64 = row.iter().zip(centered.iter()).map(|(a, b)| a * b).sum();
        for (o, r) in out.iter_mut().zip(row) {
            *o += coeff * r;
        }
    }
}

/// Component of `v − m` inside the span of the first `k` basis rows.
pub fn project_text_subspace(v: &[f64], manifold: &TextManifold, k: usize) -> Result<Vec<f64>> {
    check(manifold, v.len(), k)?;
    let mut centered = vec![0.0; v.len()];
    let mut z = vec![0.0; v.len()];
    projection_into(v.iter().copied(), manifold, k, &mut centered, &mut z);
    Ok(z)
}

/// `v − project_text_subspace(v)`.
pub fn debias(v: &[f64], manifold: &TextManifold, k: usize) -> Result<Vec<f64>> {
    let z = project_text_subspace(v, manifold, k)?;
    Ok(v.iter().zip(&z).map(|(a, b)| a - b).collect())
}

fn debias_rows_in_place(data: &mut [f32], cols: usize, manifold: &TextManifold, k: usize) {
    if k == 0 || cols == 0 {
        return;
    }
    const ROWS_PER_TASK: usize = 256;
    par::for_each_chunk_mut(data, ROWS_PER_TASK * cols, |chunk| {
        let mut centered = vec![0.0; cols];
        let mut z = vec![0.0; cols];
        for row in chunk.chunks_exact_mut(cols) {
            projection_into(row.iter().map(|&x| f64::from(x)), manifold, k, &mut centered, &mut z);
            for (x, p) in row.iter_mut().zip(&z) {
                *x = (f64::from(*x) - p) as f32;
            }
        }
    });
}

/// Row-wise [`debias`]; arithmetic runs in `f64` and the result is stored as `f32`.
pub fn debias_matrix<'a>(
    rows: impl Into<MatrixView<'a>>,
    manifold: &TextManifold,
    k: usize,
) -> Result<EmbeddingMatrix> {
    let rows = rows.into();
    check(manifold, rows.ncols(), k)?;
    let mut out = rows.to_owned();
    let cols = out.ncols();
    let n = out.nrows();
    let mut data = out.into_vec();
    debias_rows_in_place(&mut data, cols, manifold, k);
    out = EmbeddingMatrix::new(n, cols, data)?;
    Ok(out)
}

/// Debiases a tensor of any rank along its trailing axis, keeping its shape.
pub fn debias_tensor(tensor: &Tensor, manifold: &TextManifold, k: usize) -> Result<Tensor> {
    let cols = tensor.last_dim();
    check(manifold, cols, k)?;
    let mut data = tensor.data().to_vec();
    debias_rows_in_place(&mut data, cols, manifold, k);
    Tensor::new(tensor.shape().to_vec(), data)
}
