//! Seeded synthetic generators with known geometry, used by the test suites
//! and the browser demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{dot, norm, SpectralBasis};
use crate::manifold::{fit_manifold, ManifoldSource, TextManifold};
use crate::matrix::{EmbeddingMatrix, Tensor};
use crate::probe::ProbeDataset;
use crate::tensor_store::LayerDumpSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Removes from `v` its components along `against` (assumed orthonormal).
pub fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    // Two passes keep the result orthogonal to working precision.
    for _ in 0..2 {
        for u in against {
            let c = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// `k` random orthonormal vectors in `ℝ^d`, also orthogonal to `avoid`.
pub fn random_orthonormal(rng: &mut impl Rng, k: usize, d: usize, avoid: &[Vec<f64>]) -> Vec<Vec<f64>> {
    assert!(k + avoid.len() <= d, "not enough dimensions");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v = gaussian_vec(rng, d);
        orthogonalize(&mut v, avoid);
        orthogonalize(&mut v, &out);
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

/// A manifold with the given orthonormal rows, unit eigenvalues decreasing
/// by index, and mean `mean`.
pub fn manifold_from_directions(mean: Vec<f64>, directions: &[Vec<f64>]) -> TextManifold {
    let d = mean.len();
    let vectors = directions.iter().flatten().copied().collect();
    let eigenvalues = (0..directions.len()).map(|i| (directions.len() - i) as f64).collect();
    let basis = SpectralBasis::from_rows(d, vectors, eigenvalues).expect("orthonormal directions");
    TextManifold::new(mean, basis, ManifoldSource::default()).expect("matching dims")
}

/// Gaussian rows `mean + Σ stds[i]·g_i·directions[i] + isotropic·g`.
pub fn gaussian_rows(
    rng: &mut impl Rng,
    n: usize,
    mean: &[f64],
    directions: &[Vec<f64>],
    stds: &[f64],
    isotropic: f64,
) -> EmbeddingMatrix {
    let d = mean.len();
    let mut data = Vec::with_capacity(n * d);
    let mut row = vec![0.0; d];
    for _ in 0..n {
        row.copy_from_slice(mean);
        for (dir, s) in directions.iter().zip(stds) {
            let g: f64 = rng.sample(StandardNormal);
            row.iter_mut().zip(dir).for_each(|(x, u)| *x += s * g * u);
        }
        if isotropic > 0.0 {
            for x in row.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *x += isotropic * g;
            }
        }
        data.extend(row.iter().map(|&x| x as f32));
    }
    EmbeddingMatrix::new(n, d, data).expect("consistent shape")
}

/// A caption-like distribution: a few strong shared directions over an
/// isotropic floor.
#[derive(Debug, Clone)]
pub struct CaptionDistribution {
    pub mean: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
    pub isotropic: f64,
}

impl CaptionDistribution {
    pub fn random(rng: &mut impl Rng, d: usize, stds: &[f64], isotropic: f64) -> Self {
        let directions = random_orthonormal(rng, stds.len(), d, &[]);
        let mean = gaussian_vec(rng, d);
        Self {
            mean,
            directions,
            stds: stds.to_vec(),
            isotropic,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> EmbeddingMatrix {
        gaussian_rows(rng, n, &self.mean, &self.directions, &self.stds, self.isotropic)
    }
}

/// Tokens `m + r·(f·a + √(1−f²)·b)` with `a` a random unit vector in the span
/// of `manifold`'s retained rows (after dropping `drop_k`) and `b` a unit
/// vector orthogonal to the whole basis. The alignment score after dropping
/// `drop_k` is exactly `f` for every token.
pub fn planted_fraction_tokens(
    rng: &mut impl Rng,
    manifold: &TextManifold,
    drop_k: usize,
    fraction: f64,
    tokens: usize,
) -> EmbeddingMatrix {
    let d = manifold.dim();
    let all: Vec<Vec<f64>> = manifold.basis().rows().map(<[f64]>::to_vec).collect();
    let retained = &all[drop_k..];
    let mut rows = Vec::with_capacity(tokens);
    for _ in 0..tokens {
        let inside = if retained.is_empty() {
            vec![0.0; d]
        } else {
            let mut a = vec![0.0; d];
            for u in retained {
                let g: f64 = rng.sample(StandardNormal);
                a.iter_mut().zip(u).for_each(|(x, y)| *x += g * y);
            }
            let n = norm(&a);
            a.into_iter().map(|x| x / n).collect()
        };
        let outside = random_orthonormal(rng, 1, d, &all).remove(0);
        let r = 0.5 + 2.0 * rng.random::<f64>();
        let g = (1.0 - fraction * fraction).max(0.0).sqrt();
        let row: Vec<f64> = (0..d)
            .map(|i| manifold.mean()[i] + r * (fraction * inside[i] + g * outside[i]))
            .collect();
        rows.push(row);
    }
    EmbeddingMatrix::from_f64_rows(&rows).expect("consistent shape")
}

/// Layer dumps whose layer `l` has planted in-subspace norm fraction
/// `fractions[l]` for every token.
pub fn planted_alignment_dumps(
    rng: &mut impl Rng,
    manifold: &TextManifold,
    fractions: &[f64],
    images: usize,
    tokens_per_image: usize,
) -> LayerDumpSet {
    let d = manifold.dim();
    let layers = fractions
        .iter()
        .map(|&f| {
            let m = planted_fraction_tokens(rng, manifold, 0, f, images * tokens_per_image);
            Tensor::new(vec![images, tokens_per_image, d], m.into_vec()).expect("shape")
        })
        .collect();
    let layer_ids = (0..fractions.len()).collect();
    let image_ids = (0..images).map(|i| format!("img{i}")).collect();
    LayerDumpSet::new(layer_ids, image_ids, layers).expect("consistent dumps")
}

/// Probe fixture: per-image labels, a fitted text manifold, and vision
/// tokens whose label signal lives orthogonal to the whole manifold while the
/// two leading manifold directions carry large label-independent variance.
#[derive(Debug, Clone)]
pub struct PlantedProbe {
    pub manifold: TextManifold,
    pub dumps: LayerDumpSet,
    pub dataset: ProbeDataset,
}

#[derive(Debug, Clone)]
pub struct PlantedProbeConfig {
    pub dim: usize,
    pub basis_size: usize,
    pub categories: usize,
    pub images: usize,
    pub tokens_per_image: usize,
    /// Tokens per positive category that carry the object signal.
    pub object_tokens: usize,
    pub prevalence: f64,
    pub signal: f64,
    pub isotropic: f64,
    /// Per-layer std of the nuisance along the two leading directions.
    pub nuisance_stds: Vec<f64>,
    /// When false, labels are drawn independently of the features.
    pub informative: bool,
}

impl Default for PlantedProbeConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            basis_size: 8,
            categories: 4,
            images: 200,
            tokens_per_image: 16,
            object_tokens: 4,
            prevalence: 0.3,
            signal: 0.006,
            isotropic: 0.002,
            nuisance_stds: vec![1.0, 2.0, 3.0, 4.0],
            informative: true,
        }
    }
}

pub fn planted_probe(seed: u64, cfg: &PlantedProbeConfig) -> PlantedProbe {
    let mut r = rng(seed);
    let d = cfg.dim;
    let mut stds = vec![10.0, 8.0];
    stds.extend((2..cfg.basis_size).map(|i| 4.0 - 2.0 * i as f64 / cfg.basis_size as f64));
    let text = CaptionDistribution::random(&mut r, d, &stds, 0.5);
    let manifold = fit_manifold(&text.sample(&mut r, 4000), cfg.basis_size).expect("fit");

    let basis: Vec<Vec<f64>> = manifold.basis().rows().map(<[f64]>::to_vec).collect();
    let signal_dirs = random_orthonormal(&mut r, cfg.categories, d, &basis);

    let mut labels = Vec::with_capacity(cfg.images);
    for _ in 0..cfg.images {
        let mut row: Vec<bool> = (0..cfg.categories).map(|_| r.random::<f64>() < cfg.prevalence).collect();
        if !row.iter().any(|&b| b) && cfg.informative {
            row[r.random_range(0..cfg.categories)] = true;
        }
        labels.push(row);
    }
    // Features follow these labels; with `informative = false` the reported
    // labels are an independent redraw.
    let feature_labels = labels.clone();
    if !cfg.informative {
        for row in labels.iter_mut() {
            for b in row.iter_mut() {
                *b = r.random::<f64>() < cfg.prevalence;
            }
        }
    }

    let t = cfg.tokens_per_image;
    let mut layers = Vec::with_capacity(cfg.nuisance_stds.len());
    for &nuisance in &cfg.nuisance_stds {
        let mut data = Vec::with_capacity(cfg.images * t * d);
        for img_labels in &feature_labels {
            let mut tokens = gaussian_rows(&mut r, t, manifold.mean(), &basis[..2], &[nuisance, nuisance], cfg.isotropic);
            for (c, &on) in img_labels.iter().enumerate() {
                if !on {
                    continue;
                }
                for _ in 0..cfg.object_tokens {
                    let tok = r.random_range(0..t);
                    for (x, u) in tokens.row_mut(tok).iter_mut().zip(&signal_dirs[c]) {
                        *x += (cfg.signal * u) as f32;
                    }
                }
            }
            data.extend(tokens.into_vec());
        }
        layers.push(Tensor::new(vec![cfg.images, t, d], data).expect("shape"));
    }
    let image_ids: Vec<String> = (0..cfg.images).map(|i| format!("img{i:04}")).collect();
    let dumps = LayerDumpSet::new((0..layers.len()).collect(), image_ids.clone(), layers).expect("dumps");
    let dataset = ProbeDataset {
        category_names: (0..cfg.categories).map(|c| format!("cat{c}")).collect(),
        image_ids,
        labels,
    };
    PlantedProbe {
        manifold,
        dumps,
        dataset,
    }
}
