//! Token-level ridge probe with max-pooled image scores and mean average
//! precision.
//!
//! Every token of an image is a training row labeled with the image's full
//! category vector. At evaluation time token logits are max-pooled per
//! category and ranked across images.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::debias::debias_matrix;
use crate::error::{Error, Result};
use crate::linalg::CovarianceAccumulator;
use crate::manifold::ManifoldSet;
use crate::matrix::{EmbeddingMatrix, MatrixView};
use crate::par;
use crate::tensor_store::LayerDumpSet;

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const TRAIN_FRACTION: f64 = 0.8;

/// Whether the ridge problem is solved on centered data with a fitted bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intercept {
    Fit,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    dim: usize,
    /// Row-major `categories × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    lambda: f64,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn categories(&self) -> usize {
        self.bias.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights(&self, category: usize) -> &[f64] {
        &self.weights[category * self.dim..(category + 1) * self.dim]
    }

    /// Per-category logits of one token.
    pub fn logits(&self, token: &[f32]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| {
                b + self
                    .weights(c)
                    .iter()
                    .zip(token)
                    .map(|(w, &x)| w * f64::from(x))
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Streaming sufficient statistics for a multi-output ridge problem.
///
/// Rows are `[x | y]`, accumulated with the same pairwise co-moment update as
/// the covariance accumulator, so the centered Gram blocks come out directly.
#[derive(Debug, Clone)]
pub struct RidgeAccumulator {
    dim: usize,
    categories: usize,
    acc: CovarianceAccumulator,
}

impl RidgeAccumulator {
    pub fn new(dim: usize, categories: usize) -> Self {
        Self {
            dim,
            categories,
            acc: CovarianceAccumulator::new(dim + categories),
        }
    }

    pub fn rows(&self) -> u64 {
        self.acc.count()
    }

    /// Adds `features` rows paired with matching `targets` rows.
    pub fn push<'a, 'b>(
        &mut self,
        features: impl Into<MatrixView<'a>>,
        targets: impl Into<MatrixView<'b>>,
    ) -> Result<()> {
        let x = features.into();
        let y = targets.into();
        if x.ncols() != self.dim {
            return Err(Error::dim("ridge feature width", self.dim, x.ncols()));
        }
        if y.ncols() != self.categories {
            return Err(Error::dim("ridge target width", self.categories, y.ncols()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::dim("ridge target rows", x.nrows(), y.nrows()));
        }
        let width = self.dim + self.categories;
        let mut block = Vec::with_capacity(x.nrows() * width);
        for (xr, yr) in x.rows().zip(y.rows()) {
            block.extend(xr.iter().map(|&v| f64::from(v)));
            block.extend(yr.iter().map(|&v| f64::from(v)));
        }
        self.acc.accumulate_f64(&block)
    }

    /// Adds every token of one image, each labeled with `labels`.
    pub fn push_image<'a>(&mut self, tokens: impl Into<MatrixView<'a>>, labels: &[f32]) -> Result<()> {
        let tokens = tokens.into();
        if labels.len() != self.categories {
            return Err(Error::dim("image label vector", self.categories, labels.len()));
        }
        let width = self.dim + self.categories;
        if tokens.ncols() != self.dim {
            return Err(Error::dim("ridge feature width", self.dim, tokens.ncols()));
        }
        let mut block = Vec::with_capacity(tokens.nrows() * width);
        for row in tokens.rows() {
            block.extend(row.iter().map(|&v| f64::from(v)));
            block.extend(labels.iter().map(|&v| f64::from(v)));
        }
        self.acc.accumulate_f64(&block)
    }

    /// The system `(A + λI) W = B` the solver uses: `A` is `d × d`, `B` is `d × C`.
    pub fn normal_equations(&self, intercept: Intercept) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim;
        let c = self.categories;
        let w = d + c;
        let n = self.acc.count() as f64;
        let mean = self.acc.mean();
        let cm = self.acc.comoment();
        let raw = |i: usize, j: usize| match intercept {
            Intercept::Fit => cm[i * w + j],
            Intercept::None => cm[i * w + j] + n * mean[i] * mean[j],
        };
        let a = DMatrix::from_fn(d, d, raw);
        let b = DMatrix::from_fn(d, c, |i, j| raw(i, d + j));
        (a, b)
    }

    pub fn solve(&self, lambda: f64, intercept: Intercept) -> Result<RidgeModel> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidLambda(lambda));
        }
        if self.acc.count() == 0 {
            return Err(Error::EmptyTokens);
        }
        let d = self.dim;
        let (mut a, b) = self.normal_equations(intercept);
        for i in 0..d {
            a[(i, i)] += lambda;
        }
        let chol = a.cholesky().ok_or(Error::SingularSystem { lambda })?;
        let sol = chol.solve(&b);
        if sol.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularSystem { lambda });
        }
        let mean = self.acc.mean();
        let mut weights = Vec::with_capacity(self.categories * d);
        let mut bias = Vec::with_capacity(self.categories);
        for cat in 0..self.categories {
            let col = sol.column(cat);
            weights.extend(col.iter());
            bias.push(match intercept {
                Intercept::Fit => mean[d + cat] - col.iter().zip(mean).map(|(w, m)| w * m).sum::<f64>(),
                Intercept::None => 0.0,
            });
        }
        Ok(RidgeModel {
            dim: d,
            weights,
            bias,
            lambda,
        })
    }
}

/// Closed-form ridge fit of `targets` (N × C) on `features` (N × d).
pub fn fit_ridge<'a, 'b>(
    features: impl Into<MatrixView<'a>>,
    targets: impl Into<MatrixView<'b>>,
    lambda: f64,
    intercept: Intercept,
) -> Result<RidgeModel> {
    let x = features.into();
    let y = targets.into();
    if x.nrows() == 0 {
        return Err(Error::EmptyTokens);
    }
    let mut acc = RidgeAccumulator::new(x.ncols(), y.ncols());
    acc.push(x, y)?;
    acc.solve(lambda, intercept)
}

/// Per-category maximum of the token logits.
pub fn image_logits<'a>(model: &RidgeModel, tokens: impl Into<MatrixView<'a>>) -> Result<Vec<f64>> {
    let tokens = tokens.into();
    if tokens.nrows() == 0 {
        return Err(Error::EmptyTokens);
    }
    if tokens.ncols() != model.dim {
        return Err(Error::dim("token width vs probe", model.dim, tokens.ncols()));
    }
    let mut best = vec![f64::NEG_INFINITY; model.categories()];
    for row in tokens.rows() {
        for (b, l) in best.iter_mut().zip(model.logits(row)) {
            *b = b.max(l);
        }
    }
    Ok(best)
}

/// Non-interpolated average precision. Scores are ranked descending; ties
/// keep input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("AP labels vs scores", scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    /// `None` where the category lacks a positive or a negative image.
    pub per_category: Vec<Option<f64>>,
    pub evaluated: usize,
}

/// Mean AP over categories that have at least one positive and one negative.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MapReport> {
    if scores.len() != labels.len() {
        return Err(Error::dim("mAP rows", scores.len(), labels.len()));
    }
    let cats = labels.first().map_or(0, Vec::len);
    let mut per_category = Vec::with_capacity(cats);
    for c in 0..cats {
        let col_scores: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let col_labels: Vec<bool> = labels.iter().map(|l| l[c]).collect();
        let pos = col_labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == col_labels.len() {
            log::warn!("category {c}: needs both positive and negative images, skipped");
            per_category.push(None);
            continue;
        }
        per_category.push(Some(average_precision(&col_scores, &col_labels)?));
    }
    let evaluated: Vec<f64> = per_category.iter().flatten().copied().collect();
    if evaluated.is_empty() {
        return Err(Error::EmptyInput("no category has both positive and negative images".into()));
    }
    Ok(MapReport {
        map: evaluated.iter().sum::<f64>() / evaluated.len() as f64,
        per_category,
        evaluated: evaluated.len(),
    })
}

/// Image-level multi-label targets aligned with a dump's image order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub category_names: Vec<String>,
    pub image_ids: Vec<String>,
    /// One row per image, one column per category.
    pub labels: Vec<Vec<bool>>,
}

impl ProbeDataset {
    /// Aligns an `image_id → categories` map with `image_ids`. Categories are
    /// the sorted union of every listed name.
    pub fn from_category_lists(
        lists: &BTreeMap<String, Vec<String>>,
        image_ids: &[String],
    ) -> Result<Self> {
        let names: BTreeSet<&String> = lists.values().flatten().collect();
        let category_names: Vec<String> = names.into_iter().cloned().collect();
        let index: BTreeMap<&str, usize> = category_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut labels = Vec::with_capacity(image_ids.len());
        for id in image_ids {
            let cats = lists
                .get(id)
                .ok_or_else(|| Error::schema(format!("labels[{id}]"), "image has no label entry"))?;
            let mut row = vec![false; category_names.len()];
            for c in cats {
                row[index[c.as_str()]] = true;
            }
            labels.push(row);
        }
        Ok(Self {
            category_names,
            image_ids: image_ids.to_vec(),
            labels,
        })
    }

    pub fn categories(&self) -> usize {
        self.category_names.len()
    }

    fn label_row_f32(&self, image: usize) -> Vec<f32> {
        self.labels[image].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Deterministic 80/20 split of `n` images by seeded shuffle. Both index
/// lists come back sorted.
pub fn train_eval_split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut eval = idx[n_train..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub layer: usize,
    pub k: usize,
    pub map: f64,
    pub evaluated_categories: usize,
    pub per_category_ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub category_names: Vec<String>,
    pub train_images: Vec<String>,
    pub eval_images: Vec<String>,
    pub lambda: f64,
    pub seed: u64,
    /// Ordered by layer, then by `k` in the order requested.
    pub cells: Vec<ProbeCell>,
}

impl ProbeTable {
    pub fn cell(&self, layer: usize, k: usize) -> Option<&ProbeCell> {
        self.cells.iter().find(|c| c.layer == layer && c.k == k)
    }
}

fn probe_cell(
    dumps: &LayerDumpSet,
    dataset: &ProbeDataset,
    manifolds: &ManifoldSet,
    layer_index: usize,
    k: usize,
    lambda: f64,
    split: &(Vec<usize>, Vec<usize>),
) -> Result<ProbeCell> {
    let layer = dumps.layer_ids()[layer_index];
    let manifold = manifolds.for_layer(layer)?;
    let dim = dumps.dim().unwrap_or(0);
    let features = |image: usize| -> Result<EmbeddingMatrix> {
        debias_matrix(dumps.image_tokens(layer_index, image), manifold, k)
    };

    let mut acc = RidgeAccumulator::new(dim, dataset.categories());
    for &img in &split.0 {
        acc.push_image(&features(img)?, &dataset.label_row_f32(img))?;
    }
    let model = acc.solve(lambda, Intercept::Fit)?;

    let mut scores = Vec::with_capacity(split.1.len());
    let mut labels = Vec::with_capacity(split.1.len());
    for &img in &split.1 {
        scores.push(image_logits(&model, &features(img)?)?);
        labels.push(dataset.labels[img].clone());
    }
    let report = mean_average_precision(&scores, &labels)?;
    Ok(ProbeCell {
        layer,
        k,
        map: report.map,
        evaluated_categories: report.evaluated,
        per_category_ap: report.per_category,
    })
}

/// Fits one probe per `(layer, k)` cell on debiased training tokens and
/// reports eval mAP. `k = 0` is the unmodified baseline.
pub fn probe_sweep(
    dumps: &LayerDumpSet,
    dataset: &ProbeDataset,
    manifolds: &ManifoldSet,
    k_values: &[usize],
    lambda: f64,
    seed: u64,
) -> Result<ProbeTable> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidLambda(lambda));
    }
    if dataset.image_ids != dumps.image_ids() {
        return Err(Error::InvalidArgument(
            "probe dataset images are not aligned with the dump".into(),
        ));
    }
    if k_values.is_empty() {
        return Err(Error::EmptyInput("no k values".into()));
    }
    let max_k = manifolds.min_rank();
    if let Some(&k) = k_values.iter().find(|&&k| k > max_k) {
        return Err(Error::KOutOfRange { k, min: 0, max: max_k });
    }
    let split = train_eval_split(dumps.image_ids().len(), seed)?;
    let cells: Vec<(usize, usize)> = (0..dumps.layer_ids().len())
        .flat_map(|li| k_values.iter().map(move |&k| (li, k)))
        .collect();
    let results = par::map_ordered(&cells, |&(li, k)| {
        probe_cell(dumps, dataset, manifolds, li, k, lambda, &split)
            .map_err(|e| e.at_layer(dumps.layer_ids()[li]))
    });
    let ids = dumps.image_ids();
    Ok(ProbeTable {
        category_names: dataset.category_names.clone(),
        train_images: split.0.iter().map(|&i| ids[i].clone()).collect(),
        eval_images: split.1.iter().map(|&i| ids[i].clone()).collect(),
        lambda,
        seed,
        cells: results.into_iter().collect::<Result<_>>()?,
    })
}
