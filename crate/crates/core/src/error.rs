use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Variants carry enough context (offsets, fields, dims) to be actionable
/// without a backtrace. [`Error::code`] gives a stable module-qualified code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic at byte {offset}: expected \"EMB1\", found {found:?}")]
    BadMagic { offset: u64, found: [u8; 4] },

    #[error("truncated tensor at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: u64 },

    #[error("unknown dtype code {code} at byte {offset}")]
    DtypeUnknown { offset: u64, code: u8 },

    #[error("malformed tensor at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },

    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("manifest schema error in `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),

    #[error("manifest has no `{0}` entry")]
    MissingRole(String),

    #[error("dimension mismatch ({context}): expected {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("k = {k} outside allowed range {min}..={max}")]
    KOutOfRange { k: usize, min: usize, max: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("basis rows are not orthonormal (‖VVᵀ − I‖_F = {error:.3e})")]
    NotOrthonormal { error: f64 },

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("all {count} tokens have near-zero centered norm")]
    AllTokensDegenerate { count: usize },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ridge system is singular (lambda = {lambda})")]
    SingularSystem { lambda: f64 },

    #[error("invalid regularization strength {0}; lambda must be positive and finite")]
    InvalidLambda(f64),

    #[error("token matrix is empty")]
    EmptyTokens,

    #[error("no positive labels; average precision is undefined")]
    NoPositives,

    #[error("vocabulary has {vocab} entries but unembedding has {rows} rows")]
    VocabMismatch { vocab: usize, rows: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no qualifying images for probe object `{probe}` (base `{base}`)")]
    NoQualifyingImages { base: String, probe: String },

    #[error("unknown object category `{0}`")]
    UnknownCategory(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }

    /// Stable `module.kind` identifier used in CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io.failure",
            Error::BadMagic { .. } => "tensor_store.bad_magic",
            Error::Truncated { .. } => "tensor_store.truncated",
            Error::DtypeUnknown { .. } => "tensor_store.dtype_unknown",
            Error::Malformed { .. } => "tensor_store.malformed",
            Error::InvalidShape { .. } => "tensor_store.invalid_shape",
            Error::Schema { .. } => "tensor_store.schema_error",
            Error::MissingFile(_) => "tensor_store.missing_file",
            Error::MissingRole(_) => "text_manifold.missing_role",
            Error::DimMismatch { .. } => "linalg.dim_mismatch",
            Error::KOutOfRange { .. } => "linalg.k_out_of_range",
            Error::NotSymmetric { .. } => "linalg.not_symmetric",
            Error::NotOrthonormal { .. } => "linalg.not_orthonormal",
            Error::TooFewRows { .. } => "text_manifold.too_few_rows",
            Error::AllTokensDegenerate { .. } => "geometry.all_tokens_degenerate",
            Error::Layer { source, .. } => source.code(),
            Error::SingularSystem { .. } => "linear_probe.singular_system",
            Error::InvalidLambda(_) => "linear_probe.invalid_lambda",
            Error::EmptyTokens => "linear_probe.empty_tokens",
            Error::NoPositives => "linear_probe.no_positives",
            Error::VocabMismatch { .. } => "logit_lens.vocab_mismatch",
            Error::ShapeMismatch(_) => "logit_lens.shape_mismatch",
            Error::EmptyInput(_) => "halluc_eval.empty_input",
            Error::NoQualifyingImages { .. } => "halluc_eval.no_qualifying_images",
            Error::UnknownCategory(_) => "halluc_eval.unknown_category",
            Error::InvalidArgument(_) => "cli.invalid_argument",
            Error::Json(_) => "io.json",
        }
    }

    /// True when the failure came from the filesystem rather than from
    /// validating inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::MissingFile(_) => true,
            Error::Layer { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
