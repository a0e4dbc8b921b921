//! Synthetic scenes behind the three demo panels.

use ortholens::synth::{
    gaussian_vec, manifold_from_directions, planted_alignment_dumps, random_orthonormal, rng,
    CaptionDistribution,
};
use ortholens::{
    alignment_trajectory, debias, fit_manifold, subspace_similarity, ManifoldSet, Result,
};

pub const DIM: usize = 32;
pub const BASIS: usize = 8;
pub const CLOUD_POINTS: usize = 300;

/// In-subspace norm fraction planted at each decoder layer.
pub const LAYER_FRACTIONS: [f64; 8] = [0.15, 0.3, 0.45, 0.6, 0.72, 0.82, 0.9, 0.95];

/// Alignment per layer after dropping `drop_k` leading text components.
pub fn alignment_curve(seed: u64, drop_k: usize) -> Result<Vec<f64>> {
    let mut r = rng(seed);
    let dirs = random_orthonormal(&mut r, BASIS, DIM, &[]);
    let m = manifold_from_directions(gaussian_vec(&mut r, DIM), &dirs);
    let dumps = planted_alignment_dumps(&mut r, &m, &LAYER_FRACTIONS, 4, 16);
    Ok(alignment_trajectory(&dumps, &ManifoldSet::Fixed(m), drop_k)?.scores)
}

/// Vision tokens with strong variance along the first text direction and a
/// visual component orthogonal to the text basis. Returns
/// `[x, y, x', y']` per point: coordinates on (text PC1, visual axis) before
/// and after removing `k` components.
pub fn debias_cloud(seed: u64, k: usize) -> Result<Vec<f64>> {
    let mut r = rng(seed);
    let dirs = random_orthonormal(&mut r, BASIS, DIM, &[]);
    let visual = random_orthonormal(&mut r, 1, DIM, &dirs).remove(0);
    let mean = gaussian_vec(&mut r, DIM);
    let m = manifold_from_directions(mean.clone(), &dirs);
    let text_stds = [3.0, 1.5, 1.0];
    let coords = |v: &[f64]| {
        let c: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
        let dot = |u: &[f64]| c.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        [dot(&dirs[0]), dot(&visual)]
    };
    let mut out = Vec::with_capacity(CLOUD_POINTS * 4);
    for i in 0..CLOUD_POINTS {
        let g = gaussian_vec(&mut r, DIM + 4);
        let cluster = if i % 2 == 0 { 1.5 } else { -1.5 };
        let v: Vec<f64> = (0..DIM)
            .map(|j| {
                let text: f64 = text_stds.iter().enumerate().map(|(t, s)| s * g[t] * dirs[t][j]).sum();
                mean[j] + text + (cluster + 0.4 * g[3]) * visual[j] + 0.05 * g[4 + j]
            })
            .collect();
        let after = debias(&v, &m, k)?;
        out.extend(coords(&v));
        out.extend(coords(&after));
    }
    Ok(out)
}

/// `[same, shifted]`: similarity of the top-`top` subspaces fitted on two
/// disjoint samples of one caption distribution, and on a second
/// distribution whose directions are rotated away by `angle` radians.
pub fn subspace_overlap(seed: u64, top: usize, angle: f64) -> Result<Vec<f64>> {
    let mut r = rng(seed);
    let stds = [6.0, 5.0, 2.0, 1.8, 1.6, 1.4, 1.2, 1.0];
    let a = CaptionDistribution::random(&mut r, DIM, &stds, 0.3);
    let away = random_orthonormal(&mut r, stds.len(), DIM, &a.directions);
    let (c, s) = (angle.cos(), angle.sin());
    let b = CaptionDistribution {
        directions: a
            .directions
            .iter()
            .zip(&away)
            .map(|(u, w)| u.iter().zip(w).map(|(x, y)| c * x + s * y).collect())
            .collect(),
        ..a.clone()
    };
    let fit = |sample| fit_manifold(&sample, top);
    let first = fit(a.sample(&mut r, 1500))?;
    let second = fit(a.sample(&mut r, 1500))?;
    let other = fit(b.sample(&mut r, 1500))?;
    Ok(vec![
        subspace_similarity(first.basis(), second.basis())?,
        subspace_similarity(first.basis(), other.basis())?,
    ])
}
