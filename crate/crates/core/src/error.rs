//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset loading, model I/O, training, and evaluation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown dataset `{0}` (supported: cifar10, cifar100, stl10, imagenet100, manifest)")]
    UnknownDataset(String),

    #[error("dataset `{name}` missing data for split `{split}`: {detail}")]
    MissingSplit {
        name: String,
        split: String,
        detail: String,
    },

    #[error("dataset `{name}` split `{split}` has {actual} records, expected {expected}")]
    SplitCountMismatch {
        name: String,
        split: String,
        expected: usize,
        actual: usize,
    },

    #[error("corrupt dataset file {path}: {detail}")]
    CorruptData { path: String, detail: String },

    #[error("unsupported nuisance factor `{0}` (supported: rotation, hue, scale, translation)")]
    UnsupportedFactor(String),

    #[error("batch size {requested} exceeds split size {available}")]
    BatchTooLarge { requested: usize, available: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("resolution mismatch: encoder expects {expected}, image is {actual}")]
    ResolutionMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("k={k} out of range for index with {n} points (include_self={include_self})")]
    KOutOfRange { k: usize, n: usize, include_self: bool },

    #[error("id {0} not present in index")]
    UnknownId(usize),

    #[error("record {0} carries no latent; latent traversal applies to generated records only")]
    MissingLatent(usize),

    #[error("record {0} has no orbit; the manifold oracle needs ground-truth orbits")]
    MissingOrbit(usize),

    #[error("sigma must be non-negative, got {0}")]
    NegativeSigma(f64),

    #[error("finite prior needs at least one pre-sampled latent")]
    EmptyFinitePrior,

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },

    #[error("step {step} outside schedule of {total_steps} steps")]
    StepOutOfRange { step: usize, total_steps: usize },

    #[error("model is missing its {0} head")]
    MissingHead(&'static str),

    #[error("loss became non-finite at epoch {epoch} step {step}; diagnostic snapshot: {snapshot}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        snapshot: String,
    },

    #[error("dataset has no labels for split `{0}`")]
    Unlabeled(String),

    #[error("group `{0}` has fewer than two members")]
    SingletonGroup(String),

    #[error("covariance is singular even after regularization")]
    SingularCovariance,

    #[error("label spaces do not intersect: probe has {probe_classes} classes, shifted labels are {shifted:?}")]
    LabelSpaceMismatch {
        probe_classes: usize,
        shifted: Vec<usize>,
    },

    #[error("invalid config:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("artifact directory {0} already exists (runs are write-once per config hash)")]
    ArtifactExists(String),

    #[error("artifacts are not comparable: {0}")]
    IncomparableArtifacts(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
