use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroVector { norm: f64 },

    #[error("vector is not unit norm (|norm - 1| = {deviation:e})")]
    NotUnitNorm { deviation: f64 },

    #[error("dimension {0} is too small, need at least 2")]
    DimensionTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("mean of the rows is degenerate (norm of the sum {norm:e})")]
    DegenerateMean { norm: f64 },

    #[error("point is antipodal to the reference point (cosine {cosine})")]
    AntipodalPoint { cosine: f64 },

    #[error("means are antipodal, no alignment rotation exists")]
    AntipodalMeans,

    #[error("tangent vector is not based at the subspace reference point")]
    BaseMismatch,

    #[error("tangent vector is not tangent to its base point (|t . mu| = {residual:e})")]
    NotTangent { residual: f64 },

    #[error("prompt matrix needs at least {min} rows, got {actual}")]
    TooFewPrompts { min: usize, actual: usize },

    #[error("all tangent-mapped prompts are zero; subspace has rank 0")]
    RankZero,

    #[error("requested k must be at least 1")]
    InvalidK,

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid modulator configuration: {0}")]
    InvalidConfig(String),

    #[error("subspace was built for {built} features but the configuration asks for {wanted}")]
    SubspaceKindMismatch {
        built: &'static str,
        wanted: &'static str,
    },

    #[error("modulated feature has zero norm")]
    ZeroProjection,

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("attribute `{attribute}` has {actual} labels for {expected} items")]
    LabelCoverage {
        attribute: String,
        expected: usize,
        actual: usize,
    },

    #[error("missing label attribute `{0}`")]
    MissingLabel(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("need at least two items, got {0}")]
    TooFewItems(usize),

    #[error("group `{0}` has queries but no database items")]
    EmptyGroup(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension {dim} too small for {values} attribute values (need values + 2)")]
    InsufficientDimension { dim: usize, values: usize },

    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: truncated file ({detail})")]
    TruncatedFile { path: PathBuf, detail: String },

    #[error("{path}: header dimensions overflow ({detail})")]
    DimensionOverflow { path: PathBuf, detail: String },

    #[error("{path}: basis is not orthonormal (max deviation {deviation:e})")]
    OrthonormalityViolation { path: PathBuf, deviation: f64 },

    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
