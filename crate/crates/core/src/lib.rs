//! Geometry toolkit for vision-language embeddings.
//!
//! Fits a text manifold (mean plus leading principal directions of caption
//! token embeddings), removes that subspace from vision embeddings, and
//! measures the consequences: layer-wise alignment, subspace overlap, linear
//! decodability, logit-lens decoding and caption hallucination rates.
//!
//! Data enters through `.emb` tensors and a JSON manifest ([`tensor_store`]).

pub mod debias;
pub mod error;
pub mod geometry;
pub mod halluc;
pub mod lens;
pub mod linalg;
pub mod manifold;
pub mod matrix;
mod par;
pub mod probe;
pub mod synth;
pub mod tensor_store;

pub use debias::{debias, debias_matrix, debias_tensor, project_text_subspace, DebiasConfig};
pub use error::{Error, Result};
pub use geometry::{alignment_score, alignment_trajectory, similarity_matrix, subspace_similarity};
pub use linalg::{top_eigenbasis, CovarianceAccumulator, SpectralBasis};
pub use manifold::{fit_manifold, manifold_from_manifest, ManifoldSet, TextManifold};
pub use matrix::{EmbeddingMatrix, MatrixView, Tensor};
pub use tensor_store::{load_manifest, read_tensor, write_tensor, DumpManifest, LayerDumpSet, Role};

pub use nalgebra;
