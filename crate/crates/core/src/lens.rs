//! Logit lens: decode hidden states against the unembedding matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MatrixView;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensEntry {
    pub token_id: usize,
    pub token: String,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensReport {
    pub layer_id: Option<usize>,
    pub patch_index: usize,
    /// Descending by logit; ties ordered by token id.
    pub ranked: Vec<LensEntry>,
}

/// Normalization applied to the hidden state before unembedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PreNorm {
    /// Raw hidden state.
    #[default]
    None,
    /// `x / sqrt(mean(x²) + eps)`.
    Rms,
    /// `(x − mean) / sqrt(var + eps)`, without affine parameters.
    Layer,
}

const NORM_EPS: f64 = 1e-6;

fn normalize(hidden: &[f32], norm: PreNorm) -> Vec<f64> {
    let x: Vec<f64> = hidden.iter().map(|&v| f64::from(v)).collect();
    let n = x.len().max(1) as f64;
    match norm {
        PreNorm::None => x,
        PreNorm::Rms => {
            let scale = (x.iter().map(|v| v * v).sum::<f64>() / n + NORM_EPS).sqrt();
            x.into_iter().map(|v| v / scale).collect()
        }
        PreNorm::Layer => {
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let scale = (var + NORM_EPS).sqrt();
            x.into_iter().map(|v| (v - mean) / scale).collect()
        }
    }
}

fn check_vocab(unembedding: MatrixView<'_>, vocab: &[String], topk: usize) -> Result<()> {
    if vocab.len() != unembedding.nrows() {
        return Err(Error::VocabMismatch {
            vocab: vocab.len(),
            rows: unembedding.nrows(),
        });
    }
    if topk > unembedding.nrows() {
        return Err(Error::InvalidArgument(format!(
            "topk {topk} exceeds vocabulary size {}",
            unembedding.nrows()
        )));
    }
    Ok(())
}

/// Top-`topk` tokens of `unembedding · norm(hidden)`.
pub fn lens_topk_with<'a>(
    hidden: &[f32],
    unembedding: impl Into<MatrixView<'a>>,
    vocab: &[String],
    topk: usize,
    norm: PreNorm,
) -> Result<Vec<LensEntry>> {
    let unembedding = unembedding.into();
    check_vocab(unembedding, vocab, topk)?;
    if hidden.len() != unembedding.ncols() {
        return Err(Error::dim("hidden vs unembedding width", unembedding.ncols(), hidden.len()));
    }
    let h = normalize(hidden, norm);
    let logits: Vec<f64> = unembedding
        .rows()
        .map(|row| row.iter().zip(&h).map(|(&w, x)| f64::from(w) * x).sum())
        .collect();
    let mut order: Vec<usize> = (0..logits.len()).collect();
    let by_rank = |a: &usize, b: &usize| logits[*b].total_cmp(&logits[*a]).then(a.cmp(b));
    if topk < order.len() && topk > 0 {
        order.select_nth_unstable_by(topk - 1, by_rank);
        order.truncate(topk);
    }
    order.sort_unstable_by(by_rank);
    order.truncate(topk);
    Ok(order
        .into_iter()
        .map(|id| LensEntry {
            token_id: id,
            token: vocab[id].clone(),
            logit: logits[id],
        })
        .collect())
}

/// [`lens_topk_with`] on the raw hidden state.
pub fn lens_topk<'a>(
    hidden: &[f32],
    unembedding: impl Into<MatrixView<'a>>,
    vocab: &[String],
    topk: usize,
) -> Result<Vec<LensEntry>> {
    lens_topk_with(hidden, unembedding, vocab, topk, PreNorm::None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedLens {
    pub baseline: LensReport,
    pub debiased: LensReport,
}

/// Side-by-side lens reports for the selected patches (all patches when
/// `patches` is `None`).
#[allow(clippy::too_many_arguments)]
pub fn lens_compare<'a, 'b, 'c>(
    baseline: impl Into<MatrixView<'a>>,
    debiased: impl Into<MatrixView<'b>>,
    unembedding: impl Into<MatrixView<'c>>,
    vocab: &[String],
    topk: usize,
    norm: PreNorm,
    patches: Option<&[usize]>,
    layer_id: Option<usize>,
) -> Result<Vec<PairedLens>> {
    let baseline = baseline.into();
    let debiased = debiased.into();
    let unembedding = unembedding.into();
    if baseline.nrows() != debiased.nrows() || baseline.ncols() != debiased.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "baseline is {}×{}, debiased is {}×{}",
            baseline.nrows(),
            baseline.ncols(),
            debiased.nrows(),
            debiased.ncols()
        )));
    }
    let all: Vec<usize>;
    let patches = match patches {
        Some(p) => p,
        None => {
            all = (0..baseline.nrows()).collect();
            &all
        }
    };
    if let Some(&p) = patches.iter().find(|&&p| p >= baseline.nrows()) {
        return Err(Error::ShapeMismatch(format!(
            "patch {p} out of range for {} patches",
            baseline.nrows()
        )));
    }
    let reports = par::map_ordered(patches, |&p| -> Result<PairedLens> {
        let report = |m: MatrixView<'_>| -> Result<LensReport> {
            Ok(LensReport {
                layer_id,
                patch_index: p,
                ranked: lens_topk_with(m.row(p), unembedding, vocab, topk, norm)?,
            })
        };
        Ok(PairedLens {
            baseline: report(baseline)?,
            debiased: report(debiased)?,
        })
    });
    reports.into_iter().collect()
}
