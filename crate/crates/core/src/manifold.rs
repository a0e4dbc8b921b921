//! The text coordinate system: mean and leading principal directions of
//! caption-token embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{top_eigenbasis, CovarianceAccumulator, SpectralBasis};
use crate::matrix::MatrixView;
use crate::tensor_store::{read_tensor_f64, write_tensor_f64, DumpManifest, Role, RowChunks};

/// Number of principal directions retained when fitting, unless overridden.
pub const DEFAULT_BASIS_SIZE: usize = 32;

/// Rows streamed per chunk when fitting from a manifest.
pub const DEFAULT_CHUNK_ROWS: usize = 4096;

/// Below this leading eigenvalue the spectrum is reported as degenerate.
pub const DEGENERATE_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ManifoldSource {
    pub manifest_hash: Option<String>,
    pub caption_rows: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextManifold {
    mean: Vec<f64>,
    basis: SpectralBasis,
    source: ManifoldSource,
}

impl TextManifold {
    pub fn new(mean: Vec<f64>, basis: SpectralBasis, source: ManifoldSource) -> Result<Self> {
        if mean.len() != basis.dim() {
            return Err(Error::dim("manifold mean vs basis", basis.dim(), mean.len()));
        }
        Ok(Self { mean, basis, source })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn source(&self) -> &ManifoldSource {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of basis rows (K).
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.basis
            .eigenvalues()
            .first()
            .is_some_and(|&l| l < DEGENERATE_EIGENVALUE)
    }

    /// The same manifold without its `k` leading directions.
    pub fn drop_top(&self, k: usize) -> Result<TextManifold> {
        let total = self.rank();
        if k > total {
            return Err(Error::KOutOfRange { k, min: 0, max: total });
        }
        Ok(TextManifold {
            mean: self.mean.clone(),
            basis: self.basis.slice(k, total),
            source: self.source.clone(),
        })
    }

    /// Writes `mean.emb`, `basis.emb`, `eigenvalues.emb` and `manifold.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.dim();
        let k = self.rank();
        write_tensor_f64(dir.join("mean.emb"), &[d], &self.mean)?;
        if k > 0 {
            write_tensor_f64(dir.join("basis.emb"), &[k, d], self.basis.vectors())?;
            write_tensor_f64(dir.join("eigenvalues.emb"), &[k], self.basis.eigenvalues())?;
        }
        let sidecar = Sidecar {
            k,
            d,
            source_manifest_hash: self.source.manifest_hash.clone(),
            caption_rows: self.source.caption_rows,
        };
        let path = dir.join("manifold.json");
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<TextManifold> {
        let dir = dir.as_ref();
        let path = dir.join("manifold.json");
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
            _ => Error::io(&path, e),
        })?;
        let sidecar: Sidecar = serde_json::from_str(&text)
            .map_err(|e| Error::schema("manifold.json", e.to_string()))?;
        let (mshape, mean) = read_tensor_f64(dir.join("mean.emb"))?;
        if mshape != [sidecar.d] {
            return Err(Error::dim("mean.emb length", sidecar.d, mshape.iter().product()));
        }
        let basis = if sidecar.k == 0 {
            SpectralBasis::empty(sidecar.d)
        } else {
            let (bshape, vectors) = read_tensor_f64(dir.join("basis.emb"))?;
            if bshape != [sidecar.k, sidecar.d] {
                return Err(Error::schema(
                    "basis.emb",
                    format!("shape {bshape:?} does not match k={} d={}", sidecar.k, sidecar.d),
                ));
            }
            let (_, eigenvalues) = read_tensor_f64(dir.join("eigenvalues.emb"))?;
            SpectralBasis::from_rows(sidecar.d, vectors, eigenvalues)?
        };
        TextManifold::new(
            mean,
            basis,
            ManifoldSource {
                manifest_hash: sidecar.source_manifest_hash,
                caption_rows: sidecar.caption_rows,
            },
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    k: usize,
    d: usize,
    source_manifest_hash: Option<String>,
    caption_rows: u64,
}

/// Fits the manifold from a finished accumulator.
pub fn manifold_from_accumulator(
    acc: &CovarianceAccumulator,
    k: usize,
    source: ManifoldSource,
) -> Result<TextManifold> {
    let d = acc.dim();
    if k < 1 || k > d {
        return Err(Error::KOutOfRange { k, min: 1, max: d });
    }
    let rows = acc.count() as usize;
    if rows < k + 1 {
        return Err(Error::TooFewRows { needed: k + 1, got: rows });
    }
    let cov = acc.covariance().expect("at least two rows");
    let basis = top_eigenbasis(&cov, k)?;
    let manifold = TextManifold::new(acc.mean().to_vec(), basis, source)?;
    if manifold.is_degenerate() {
        log::warn!(
            "degenerate text spectrum (leading eigenvalue {:.3e}); basis directions are arbitrary",
            manifold.basis.eigenvalues()[0]
        );
    }
    Ok(manifold)
}

/// Fits mean and top-`k` principal directions of in-memory caption-token rows.
pub fn fit_manifold<'a>(rows: impl Into<MatrixView<'a>>, k: usize) -> Result<TextManifold> {
    let rows = rows.into();
    let mut acc = CovarianceAccumulator::new(rows.ncols());
    acc.accumulate(rows)?;
    manifold_from_accumulator(
        &acc,
        k,
        ManifoldSource {
            manifest_hash: None,
            caption_rows: rows.nrows() as u64,
        },
    )
}

/// Streams a manifest tensor through the accumulator `chunk_rows` rows at a time.
pub fn manifold_from_role(
    manifest: &DumpManifest,
    role: Role,
    k: usize,
    chunk_rows: usize,
) -> Result<TextManifold> {
    let entry = manifest.require(role)?;
    let chunks = RowChunks::open(&entry.path, chunk_rows)?;
    let mut acc = CovarianceAccumulator::new(chunks.header().last_dim());
    for chunk in chunks {
        acc.accumulate(&chunk?)?;
    }
    let source = ManifoldSource {
        manifest_hash: Some(manifest.source_hash().to_owned()),
        caption_rows: acc.count(),
    };
    manifold_from_accumulator(&acc, k, source)
}

/// Fits the manifold from a manifest's `text_embeddings` tensor.
pub fn manifold_from_manifest(
    manifest: &DumpManifest,
    k: usize,
    chunk_rows: usize,
) -> Result<TextManifold> {
    manifold_from_role(manifest, Role::TextEmbeddings, k, chunk_rows)
}

/// Either one manifold shared by every layer, or one per decoder layer.
#[derive(Debug, Clone)]
pub enum ManifoldSet {
    Fixed(TextManifold),
    PerLayer(BTreeMap<usize, TextManifold>),
}

impl ManifoldSet {
    pub fn for_layer(&self, layer: usize) -> Result<&TextManifold> {
        match self {
            ManifoldSet::Fixed(m) => Ok(m),
            ManifoldSet::PerLayer(map) => map.get(&layer).ok_or_else(|| {
                Error::MissingRole(format!("manifold for layer {layer}"))
            }),
        }
    }

    /// Smallest basis size over all member manifolds.
    pub fn min_rank(&self) -> usize {
        match self {
            ManifoldSet::Fixed(m) => m.rank(),
            ManifoldSet::PerLayer(map) => map.values().map(TextManifold::rank).min().unwrap_or(0),
        }
    }

    /// Fits one manifold per `text_layer_<l>` entry.
    pub fn per_layer_from_manifest(
        manifest: &DumpManifest,
        k: usize,
        chunk_rows: usize,
    ) -> Result<Self> {
        let layers = manifest.layers_with(Role::TextLayer);
        if layers.is_empty() {
            return Err(Error::MissingRole("text_layer_<l>".into()));
        }
        let mut map = BTreeMap::new();
        for l in layers {
            let m = manifold_from_role(manifest, Role::TextLayer(l), k, chunk_rows)
                .map_err(|e| e.at_layer(l))?;
            map.insert(l, m);
        }
        Ok(ManifoldSet::PerLayer(map))
    }

    /// Writes a fixed manifold directly into `dir`, or per-layer manifolds
    /// into `dir/layer_<l>/`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        match self {
            ManifoldSet::Fixed(m) => m.save(dir),
            ManifoldSet::PerLayer(map) => {
                for (l, m) in map {
                    m.save(dir.join(format!("layer_{l}")))?;
                }
                Ok(())
            }
        }
    }

    /// Inverse of [`ManifoldSet::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if dir.join("manifold.json").is_file() {
            return TextManifold::load(dir).map(ManifoldSet::Fixed);
        }
        let entries = std::fs::read_dir(dir).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(dir.to_path_buf()),
            _ => Error::io(dir, e),
        })?;
        let mut map = BTreeMap::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name();
            let Some(layer) = name
                .to_str()
                .and_then(|n| n.strip_prefix("layer_"))
                .and_then(|n| n.parse::<usize>().ok())
            else {
                continue;
            };
            map.insert(layer, TextManifold::load(entry.path())?);
        }
        if map.is_empty() {
            return Err(Error::MissingFile(dir.join("manifold.json")));
        }
        Ok(ManifoldSet::PerLayer(map))
    }
}
