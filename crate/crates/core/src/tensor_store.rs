//! `.emb` binary tensors and JSON dump manifests.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "EMB1"
//! 4       1           dtype code (0 = f32, 1 = f64)
//! 5       1           rank (1..=3)
//! 6       6           reserved, zero
//! 12      8 * rank    dims as u64
//! ..      elem * n    row-major element block
//! ```
//!
//! Readers accept both dtypes and convert to the canonical `f32`; the `f64`
//! path exists for quantities (basis vectors, means) that are stored at full
//! precision.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{check_shape, element_count, EmbeddingMatrix, MatrixView, Tensor};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const FIXED_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Parsed header of an `.emb` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl TensorHeader {
    pub fn header_len(&self) -> usize {
        FIXED_HEADER_LEN + 8 * self.shape.len()
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data_len(&self) -> u64 {
        self.element_count() as u64 * self.dtype.size() as u64
    }

    pub fn file_len(&self) -> u64 {
        self.header_len() as u64 + self.data_len()
    }

    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("validated rank >= 1")
    }
}

fn encode_header(dtype: Dtype, shape: &[usize]) -> Result<Vec<u8>> {
    check_shape(shape)?;
    element_count(shape)?;
    let mut out = Vec::with_capacity(FIXED_HEADER_LEN + 8 * shape.len());
    out.extend_from_slice(&MAGIC);
    out.push(dtype.code());
    out.push(shape.len() as u8);
    out.extend_from_slice(&[0u8; 6]);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(out)
}

/// Serializes an `f32` tensor to bytes.
pub fn encode_f32(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let mut out = encode_header(Dtype::F32, shape)?;
    if element_count(shape)? != data.len() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("data has {} elements", data.len()),
        });
    }
    out.reserve(data.len() * 4);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Serializes an `f64` tensor to bytes.
pub fn encode_f64(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let mut out = encode_header(Dtype::F64, shape)?;
    if element_count(shape)? != data.len() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("data has {} elements", data.len()),
        });
    }
    out.reserve(data.len() * 8);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Parses and validates the header at the start of `bytes`.
///
/// `available` is the total number of bytes the source holds, so that a
/// truncated data block is reported even when only the header was read.
pub fn decode_header(bytes: &[u8], available: u64) -> Result<TensorHeader> {
    let need = |offset: usize, len: usize| -> Result<()> {
        if bytes.len() < offset + len {
            Err(Error::Truncated {
                offset: bytes.len() as u64,
                needed: (offset + len - bytes.len()) as u64,
            })
        } else {
            Ok(())
        }
    };
    need(0, 4)?;
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    if found != MAGIC {
        return Err(Error::BadMagic { offset: 0, found });
    }
    need(4, 2)?;
    let dtype = Dtype::from_code(bytes[4]).ok_or(Error::DtypeUnknown {
        offset: 4,
        code: bytes[4],
    })?;
    let rank = bytes[5] as usize;
    if !(1..=3).contains(&rank) {
        return Err(Error::Malformed {
            offset: 5,
            reason: format!("rank {rank} not in 1..=3"),
        });
    }
    need(6, 6)?;
    if let Some(pos) = bytes[6..12].iter().position(|&b| b != 0) {
        return Err(Error::Malformed {
            offset: 6 + pos as u64,
            reason: "reserved byte is not zero".into(),
        });
    }
    need(FIXED_HEADER_LEN, 8 * rank)?;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = FIXED_HEADER_LEN + 8 * i;
        let raw = u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
        let dim = usize::try_from(raw).map_err(|_| Error::Malformed {
            offset: off as u64,
            reason: format!("dimension {raw} does not fit in usize"),
        })?;
        if dim == 0 {
            return Err(Error::Malformed {
                offset: off as u64,
                reason: "zero-sized dimension".into(),
            });
        }
        shape.push(dim);
    }
    let header_len = (FIXED_HEADER_LEN + 8 * rank) as u64;
    let data_len = shape
        .iter()
        .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or(Error::Malformed {
            offset: FIXED_HEADER_LEN as u64,
            reason: "dimension product overflows".into(),
        })?;
    let expected = header_len.checked_add(data_len).ok_or(Error::Malformed {
        offset: FIXED_HEADER_LEN as u64,
        reason: "dimension product overflows".into(),
    })?;
    if available < expected {
        return Err(Error::Truncated {
            offset: available,
            needed: expected - available,
        });
    }
    if available > expected {
        return Err(Error::Malformed {
            offset: expected,
            reason: format!("{} trailing bytes after data block", available - expected),
        });
    }
    Ok(TensorHeader { dtype, shape })
}

/// Decoded tensor that keeps its on-disk element type.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32 { shape, .. } | StoredTensor::F64 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            StoredTensor::F32 { .. } => Dtype::F32,
            StoredTensor::F64 { .. } => Dtype::F64,
        }
    }

    pub fn into_f32(self) -> Tensor {
        match self {
            StoredTensor::F32 { shape, data } => Tensor::new(shape, data),
            StoredTensor::F64 { shape, data } => {
                Tensor::new(shape, data.into_iter().map(|x| x as f32).collect())
            }
        }
        .expect("decoded shape is validated")
    }

    pub fn into_f64(self) -> (Vec<usize>, Vec<f64>) {
        match self {
            StoredTensor::F32 { shape, data } => {
                (shape, data.into_iter().map(f64::from).collect())
            }
            StoredTensor::F64 { shape, data } => (shape, data),
        }
    }
}

/// Decodes a complete `.emb` byte image.
pub fn decode(bytes: &[u8]) -> Result<StoredTensor> {
    let header = decode_header(bytes, bytes.len() as u64)?;
    let block = &bytes[header.header_len()..];
    let shape = header.shape;
    Ok(match header.dtype {
        Dtype::F32 => StoredTensor::F32 {
            shape,
            data: block
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        },
        Dtype::F64 => StoredTensor::F64 {
            shape,
            data: block
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        },
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Anything that can be written as an `f32` tensor.
pub trait AsTensor {
    fn tensor_shape(&self) -> Vec<usize>;
    fn tensor_data(&self) -> &[f32];
}

impl AsTensor for Tensor {
    fn tensor_shape(&self) -> Vec<usize> {
        self.shape().to_vec()
    }

    fn tensor_data(&self) -> &[f32] {
        self.data()
    }
}

impl AsTensor for EmbeddingMatrix {
    fn tensor_shape(&self) -> Vec<usize> {
        vec![self.nrows(), self.ncols()]
    }

    fn tensor_data(&self) -> &[f32] {
        self.as_slice()
    }
}

impl AsTensor for MatrixView<'_> {
    fn tensor_shape(&self) -> Vec<usize> {
        vec![self.nrows(), self.ncols()]
    }

    fn tensor_data(&self) -> &[f32] {
        self.as_slice()
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &impl AsTensor) -> Result<()> {
    let bytes = encode_f32(&tensor.tensor_shape(), tensor.tensor_data())?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn write_tensor_f64(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode_f64(shape, data)?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_stored(path: impl AsRef<Path>) -> Result<StoredTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode(&bytes)
}

/// Reads a tensor, converting `f64` payloads to `f32`.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_stored(path).map(StoredTensor::into_f32)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    read_tensor(path)?.try_into()
}

/// Reads a tensor at full precision.
pub fn read_tensor_f64(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    read_stored(path).map(StoredTensor::into_f64)
}

/// Validates a file's header against its length without loading the data.
pub fn read_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = vec![0u8; (FIXED_HEADER_LEN + 24).min(len as usize)];
    file.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    // Only the bytes the rank calls for are meaningful.
    let rank = head.get(5).copied().unwrap_or(0) as usize;
    let keep = (FIXED_HEADER_LEN + 8 * rank.min(3)).min(head.len());
    decode_header(&head[..keep], len)
}

/// Streams a rank-1/2 tensor (or the flattened rows of a rank-3 tensor) in
/// fixed-size row chunks.
pub struct RowChunks {
    path: PathBuf,
    reader: BufReader<File>,
    header: TensorHeader,
    rows_left: usize,
    chunk_rows: usize,
}

impl RowChunks {
    pub fn open(path: impl AsRef<Path>, chunk_rows: usize) -> Result<Self> {
        let path = path.as_ref();
        if chunk_rows == 0 {
            return Err(Error::InvalidArgument("chunk size must be positive".into()));
        }
        let header = read_header(path)?;
        let mut reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut skip = vec![0u8; header.header_len()];
        reader.read_exact(&mut skip).map_err(|e| Error::io(path, e))?;
        let rows_left = header.element_count() / header.last_dim();
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            header,
            rows_left,
            chunk_rows,
        })
    }

    pub fn header(&self) -> &TensorHeader {
        &self.header
    }

    pub fn total_rows(&self) -> usize {
        self.header.element_count() / self.header.last_dim()
    }
}

impl Iterator for RowChunks {
    type Item = Result<EmbeddingMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.rows_left == 0 {
            return None;
        }
        let rows = self.rows_left.min(self.chunk_rows);
        let cols = self.header.last_dim();
        let elem = self.header.dtype.size();
        let mut buf = vec![0u8; rows * cols * elem];
        if let Err(e) = self.reader.read_exact(&mut buf) {
            self.rows_left = 0;
            return Some(Err(Error::io(&self.path, e)));
        }
        self.rows_left -= rows;
        let data: Vec<f32> = match self.header.dtype {
            Dtype::F32 => buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            Dtype::F64 => buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                .collect(),
        };
        Some(EmbeddingMatrix::new(rows, cols, data))
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// What a file referenced by a manifest contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    TextEmbeddings,
    Unembedding,
    /// Vision-token states at a decoder layer, shape (image, token, dim).
    VisionLayer(usize),
    /// Patch hidden states at a decoder layer, shape (image, patch, dim).
    HiddenStatesLayer(usize),
    /// Caption-token states at a decoder layer, for per-layer manifolds.
    TextLayer(usize),
}

impl Role {
    pub fn parse(key: &str) -> Option<Role> {
        let layer = |prefix: &str| -> Option<usize> {
            let rest = key.strip_prefix(prefix)?;
            if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            rest.parse().ok()
        };
        match key {
            "text_embeddings" => Some(Role::TextEmbeddings),
            "unembedding" => Some(Role::Unembedding),
            _ => layer("vision_layer_")
                .map(Role::VisionLayer)
                .or_else(|| layer("hidden_states_layer_").map(Role::HiddenStatesLayer))
                .or_else(|| layer("text_layer_").map(Role::TextLayer)),
        }
    }

    pub fn layer(&self) -> Option<usize> {
        match *self {
            Role::VisionLayer(l) | Role::HiddenStatesLayer(l) | Role::TextLayer(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::TextEmbeddings => f.write_str("text_embeddings"),
            Role::Unembedding => f.write_str("unembedding"),
            Role::VisionLayer(l) => write!(f, "vision_layer_{l}"),
            Role::HiddenStatesLayer(l) => write!(f, "hidden_states_layer_{l}"),
            Role::TextLayer(l) => write!(f, "text_layer_{l}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub header: TensorHeader,
}

/// A validated dump manifest. Construction checks every invariant, so a
/// value of this type always refers to existing, well-formed tensors.
#[derive(Debug, Clone)]
pub struct DumpManifest {
    pub model_id: String,
    pub layer_ids: Vec<usize>,
    pub image_ids: Vec<String>,
    pub token_strings: Option<Vec<String>>,
    files: BTreeMap<Role, ManifestEntry>,
    source_hash: String,
    dir: PathBuf,
}

impl DumpManifest {
    pub fn entry(&self, role: Role) -> Option<&ManifestEntry> {
        self.files.get(&role)
    }

    pub fn require(&self, role: Role) -> Result<&ManifestEntry> {
        self.entry(role)
            .ok_or_else(|| Error::MissingRole(role.to_string()))
    }

    pub fn roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.files.keys().copied()
    }

    /// Hex SHA-256 of the manifest document.
    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Layers (in manifest order) that have a file for the given role kind.
    pub fn layers_with(&self, role: fn(usize) -> Role) -> Vec<usize> {
        self.layer_ids
            .iter()
            .copied()
            .filter(|&l| self.files.contains_key(&role(l)))
            .collect()
    }

    pub fn load_tensor(&self, role: Role) -> Result<Tensor> {
        read_tensor(&self.require(role)?.path)
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::schema(name, "required field is missing"))
}

fn string_list(value: &Value, name: &str) -> Result<Vec<String>> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::schema(name, "expected an array of strings"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_owned)
                .ok_or_else(|| Error::schema(format!("{name}[{i}]"), "expected a string"))
        })
        .collect()
}

/// Parses and validates a manifest document. Relative file paths are
/// resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DumpManifest> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::schema("<document>", e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::schema("<document>", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "model_id" | "layer_ids" | "files" | "image_ids" | "token_strings"
        ) {
            return Err(Error::schema(key, "unknown field"));
        }
    }

    let model_id = field(obj, "model_id")?
        .as_str()
        .ok_or_else(|| Error::schema("model_id", "expected a string"))?
        .to_owned();

    let layer_ids: Vec<usize> = field(obj, "layer_ids")?
        .as_array()
        .ok_or_else(|| Error::schema("layer_ids", "expected an array of integers"))?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .and_then(|x| usize::try_from(x).ok())
                .ok_or_else(|| {
                    Error::schema(format!("layer_ids[{i}]"), "expected a non-negative integer")
                })
        })
        .collect::<Result<_>>()?;
    if let Some(w) = layer_ids.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::schema(
            "layer_ids",
            format!("must be strictly increasing ({} then {})", w[0], w[1]),
        ));
    }

    let image_ids = string_list(field(obj, "image_ids")?, "image_ids")?;
    let token_strings = match obj.get("token_strings") {
        None | Some(Value::Null) => None,
        Some(v) => Some(string_list(v, "token_strings")?),
    };

    let files_obj = field(obj, "files")?
        .as_object()
        .ok_or_else(|| Error::schema("files", "expected an object mapping role to path"))?;
    let mut files = BTreeMap::new();
    for (key, value) in files_obj {
        let fname = format!("files.{key}");
        let role = Role::parse(key).ok_or_else(|| {
            Error::schema(
                &fname,
                "unknown role (expected text_embeddings, unembedding, vision_layer_<l>, \
                 hidden_states_layer_<l> or text_layer_<l>)",
            )
        })?;
        if let Some(l) = role.layer() {
            if !layer_ids.contains(&l) {
                return Err(Error::schema(&fname, format!("layer {l} is not listed in layer_ids")));
            }
        }
        let rel = value
            .as_str()
            .ok_or_else(|| Error::schema(&fname, "expected a path string"))?;
        let path = base_dir.join(rel);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let header = read_header(&path)?;
        files.insert(role, ManifestEntry { path, header });
    }

    validate_shapes(&files, &image_ids, token_strings.as_deref())?;

    let source_hash = hex::encode(Sha256::digest(text.as_bytes()));
    Ok(DumpManifest {
        model_id,
        layer_ids,
        image_ids,
        token_strings,
        files,
        source_hash,
        dir: base_dir.to_path_buf(),
    })
}

fn validate_shapes(
    files: &BTreeMap<Role, ManifestEntry>,
    image_ids: &[String],
    token_strings: Option<&[String]>,
) -> Result<()> {
    let model_dim = files
        .get(&Role::TextEmbeddings)
        .or_else(|| files.values().next())
        .map(|e| e.header.last_dim());
    for (role, entry) in files {
        let shape = &entry.header.shape;
        let ctx = |what: &str| format!("{role} {what}");
        if let Some(d) = model_dim {
            if entry.header.last_dim() != d {
                return Err(Error::dim(ctx("embedding dim"), d, entry.header.last_dim()));
            }
        }
        match role {
            Role::TextEmbeddings | Role::TextLayer(_) | Role::Unembedding => {
                if shape.len() != 2 {
                    return Err(Error::schema(format!("files.{role}"), "expected a rank-2 tensor"));
                }
            }
            Role::VisionLayer(_) | Role::HiddenStatesLayer(_) => {
                let images = match shape.len() {
                    3 => shape[0],
                    2 => 1,
                    _ => {
                        return Err(Error::schema(
                            format!("files.{role}"),
                            "expected (image, token, dim) or (token, dim)",
                        ))
                    }
                };
                if images != image_ids.len() {
                    return Err(Error::dim(ctx("image axis vs image_ids"), image_ids.len(), images));
                }
            }
        }
        if *role == Role::Unembedding {
            if let Some(vocab) = token_strings {
                if vocab.len() != shape[0] {
                    return Err(Error::dim("token_strings vs unembedding rows", shape[0], vocab.len()));
                }
            }
        }
    }
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DumpManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

// ---------------------------------------------------------------------------
// Layer dumps
// ---------------------------------------------------------------------------

/// Per-layer (image, token, dim) tensors for a set of images.
#[derive(Debug, Clone)]
pub struct LayerDumpSet {
    layer_ids: Vec<usize>,
    image_ids: Vec<String>,
    layers: Vec<Tensor>,
}

impl LayerDumpSet {
    /// Rank-2 tensors are promoted to a single image.
    pub fn new(layer_ids: Vec<usize>, image_ids: Vec<String>, layers: Vec<Tensor>) -> Result<Self> {
        if layer_ids.len() != layers.len() {
            return Err(Error::dim("layer count", layer_ids.len(), layers.len()));
        }
        if let Some(w) = layer_ids.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "layer ids must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let mut promoted = Vec::with_capacity(layers.len());
        let mut dim = None;
        for (l, t) in layer_ids.iter().zip(layers) {
            let t = match t.rank() {
                3 => t,
                2 => {
                    let shape = vec![1, t.shape()[0], t.shape()[1]];
                    Tensor::new(shape, t.into_data())?
                }
                _ => {
                    return Err(Error::InvalidShape {
                        shape: t.shape().to_vec(),
                        reason: format!("layer {l}: expected rank 2 or 3"),
                    })
                }
            };
            if t.shape()[0] != image_ids.len() {
                return Err(Error::dim(format!("layer {l} image axis"), image_ids.len(), t.shape()[0]));
            }
            let d = *dim.get_or_insert(t.last_dim());
            if t.last_dim() != d {
                return Err(Error::dim(format!("layer {l} embedding dim"), d, t.last_dim()));
            }
            promoted.push(t);
        }
        Ok(Self {
            layer_ids,
            image_ids,
            layers: promoted,
        })
    }

    /// Loads every layer of the given role kind, in manifest order.
    pub fn from_manifest(manifest: &DumpManifest, role: fn(usize) -> Role) -> Result<Self> {
        let layer_ids = manifest.layers_with(role);
        let layers = layer_ids
            .iter()
            .map(|&l| manifest.load_tensor(role(l)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layer_ids, manifest.image_ids.clone(), layers)
    }

    pub fn layer_ids(&self) -> &[usize] {
        &self.layer_ids
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn dim(&self) -> Option<usize> {
        self.layers.first().map(Tensor::last_dim)
    }

    pub fn layer_index(&self, layer: usize) -> Option<usize> {
        self.layer_ids.iter().position(|&l| l == layer)
    }

    /// All tokens of all images at a layer, as one matrix.
    pub fn layer_tokens(&self, index: usize) -> MatrixView<'_> {
        let t = &self.layers[index];
        let s = t.shape();
        MatrixView::new(s[0] * s[1], s[2], t.data()).expect("validated tensor")
    }

    /// Tokens of one image at a layer.
    pub fn image_tokens(&self, index: usize, image: usize) -> MatrixView<'_> {
        self.layers[index].outer(image).expect("validated tensor")
    }

    pub fn layer_tensor(&self, index: usize) -> &Tensor {
        &self.layers[index]
    }

    /// Keeps only the listed layers.
    pub fn select_layers(&self, keep: &[usize]) -> Result<Self> {
        let mut ids = Vec::new();
        let mut layers = Vec::new();
        for &l in keep {
            let i = self
                .layer_index(l)
                .ok_or_else(|| Error::InvalidArgument(format!("layer {l} is not in the dump")))?;
            ids.push(l);
            layers.push(self.layers[i].clone());
        }
        Self::new(ids, self.image_ids.clone(), layers)
    }
}
