//! Over-alignment diagnostics: how much of each vision token lies inside the
//! text subspace, and how much two fitted subspaces overlap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, SpectralBasis};
use crate::manifold::{ManifoldSet, TextManifold};
use crate::matrix::MatrixView;
use crate::par;
use crate::tensor_store::LayerDumpSet;

/// Tokens whose centered norm falls below this are left out of the mean.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub score: f64,
    /// Tokens contributing to the mean (M).
    pub tokens: usize,
    /// Tokens excluded for near-zero centered norm.
    pub excluded: usize,
}

/// Mean ratio `‖z_j‖ / ‖v_j − m‖` where `z_j` projects onto the manifold
/// basis after its `drop_k` leading rows are removed.
pub fn alignment_score<'a>(
    rows: impl Into<MatrixView<'a>>,
    manifold: &TextManifold,
    drop_k: usize,
) -> Result<AlignmentScore> {
    let rows = rows.into();
    if rows.ncols() != manifold.dim() {
        return Err(Error::dim("tokens vs manifold", manifold.dim(), rows.ncols()));
    }
    if rows.nrows() == 0 {
        return Err(Error::EmptyTokens);
    }
    let retained = manifold.drop_top(drop_k)?;
    let basis = retained.basis();
    let mean = manifold.mean();

    let mut centered = vec![0.0; rows.ncols()];
    let mut sum = 0.0;
    let mut tokens = 0;
    let mut excluded = 0;
    for row in rows.rows() {
        for ((c, &x), m) in centered.iter_mut().zip(row).zip(mean) {
            *c = f64::from(x) - m;
        }
        let full = dot(&centered, &centered).sqrt();
        if full < DEGENERATE_NORM {
            excluded += 1;
            continue;
        }
        // Rows are orthonormal, so ‖z‖² is the sum of squared coordinates.
        let projected: f64 = basis.rows().map(|b| dot(b, &centered).powi(2)).sum::<f64>().sqrt();
        sum += projected / full;
        tokens += 1;
    }
    if tokens == 0 {
        return Err(Error::AllTokensDegenerate { count: excluded });
    }
    if excluded > 0 {
        log::info!("alignment: excluded {excluded} near-zero tokens");
    }
    Ok(AlignmentScore {
        score: sum / tokens as f64,
        tokens,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrajectory {
    pub layer_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub token_counts: Vec<usize>,
    pub excluded: Vec<usize>,
    pub drop_k: usize,
}

/// Per-layer alignment over every vision token of every image.
pub fn alignment_trajectory(
    dumps: &LayerDumpSet,
    manifolds: &ManifoldSet,
    drop_k: usize,
) -> Result<AlignmentTrajectory> {
    let indices: Vec<usize> = (0..dumps.layer_ids().len()).collect();
    let per_layer = par::map_ordered(&indices, |&i| {
        let layer = dumps.layer_ids()[i];
        manifolds
            .for_layer(layer)
            .and_then(|m| alignment_score(dumps.layer_tokens(i), m, drop_k))
            .map_err(|e| e.at_layer(layer))
    });
    let mut traj = AlignmentTrajectory {
        layer_ids: dumps.layer_ids().to_vec(),
        scores: Vec::new(),
        token_counts: Vec::new(),
        excluded: Vec::new(),
        drop_k,
    };
    for r in per_layer {
        let s = r?;
        traj.scores.push(s.score);
        traj.token_counts.push(s.tokens);
        traj.excluded.push(s.excluded);
    }
    Ok(traj)
}

fn canonical_first(a: &SpectralBasis, b: &SpectralBasis) -> bool {
    match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => {
            let ord = a
                .vectors()
                .iter()
                .zip(b.vectors())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal);
            ord.is_le()
        }
        o => o.is_lt(),
    }
}

/// `‖U_a U_bᵀ‖_F / √min(K_a, K_b)` for bases with orthonormal rows.
pub fn subspace_similarity(a: &SpectralBasis, b: &SpectralBasis) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("subspace dims", a.dim(), b.dim()));
    }
    let k = a.len().min(b.len());
    if k == 0 {
        return Err(Error::EmptyInput("subspace similarity of an empty basis".into()));
    }
    // Canonical argument order makes the result exactly symmetric.
    let (a, b) = if canonical_first(a, b) { (a, b) } else { (b, a) };
    let mut sum = 0.0;
    for ra in a.rows() {
        for rb in b.rows() {
            sum += dot(ra, rb).powi(2);
        }
    }
    Ok(sum.sqrt() / (k as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Pairwise [`subspace_similarity`] over labeled bases.
pub fn similarity_matrix(bases: &[(String, SpectralBasis)]) -> Result<SimilarityMatrix> {
    if bases.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "similarity matrix needs at least two bases, got {}",
            bases.len()
        )));
    }
    let n = bases.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let sims = par::map_ordered(&pairs, |&(i, j)| {
        subspace_similarity(&bases[i].1, &bases[j].1).map_err(|e| match e {
            Error::DimMismatch { expected, actual, .. } => Error::DimMismatch {
                context: format!("bases `{}` and `{}`", bases[i].0, bases[j].0),
                expected,
                actual,
            },
            other => other,
        })
    });
    let mut values = vec![vec![0.0; n]; n];
    for (&(i, j), s) in pairs.iter().zip(sims) {
        let s = s?;
        values[i][j] = s;
        values[j][i] = s;
    }
    Ok(SimilarityMatrix {
        labels: bases.iter().map(|(l, _)| l.clone()).collect(),
        values,
    })
}
