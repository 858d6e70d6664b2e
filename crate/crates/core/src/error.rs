//! Crate-wide error type.
//!
//! Every variant maps to a stable, machine-readable code (see [`Error::code`])
//! which is what the subprocess protocol and the CLI error report carry.

use std::path::PathBuf;

use crate::corpus::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no records survived label mapping for dataset `{dataset}`")]
    EmptyInput { dataset: String },

    #[error("raw label `{label}` (record `{id}`) is not in the label map")]
    UnmappedLabel { id: String, label: String },

    #[error("duplicate id `{id}` in dataset `{dataset}`")]
    DuplicateId { dataset: String, id: String },

    #[error("record `{id}` has empty text after normalization")]
    EmptyText { id: String },

    #[error("class {label} has {count} examples, need at least {required}")]
    ClassTooSmall {
        label: Label,
        count: usize,
        required: usize,
    },

    #[error("backend `{backend}` does not declare capability {capability}")]
    CapabilityMissing { backend: String, capability: String },

    #[error("training data contains only class {present}")]
    SingleClassTrain { present: Label },

    #[error("backend failure ({}): {message}", if *retryable { "retryable" } else { "fatal" })]
    BackendFailure { message: String, retryable: bool },

    #[error("generator tuning input mixes classes or datasets: {detail}")]
    MixedClassInput { detail: String },

    #[error("classifier `{model_id}` has not been trained on this backend")]
    UntrainedClassifier { model_id: String },

    #[error("generator `{model_id}` is unknown to this backend")]
    UnknownGenerator { model_id: String },

    #[error("test leakage: {detail}")]
    TestLeakage { detail: String },

    #[error("sampling exhausted for {dataset}/{label}: {collected} of {requested} after {rounds} rounds")]
    SamplingExhausted {
        dataset: String,
        label: Label,
        requested: usize,
        collected: usize,
        rounds: usize,
    },

    #[error("stratum {stratum} of source `{source_name}` is short by {shortfall} (needed {needed}, has {available})")]
    StratumUnderflow {
        source_name: String,
        stratum: String,
        needed: usize,
        available: usize,
        shortfall: usize,
    },

    #[error("merge input `{id}` is not synthetic")]
    OriginViolation { id: String },

    #[error("unknown dataset `{name}`")]
    UnknownDataset { name: String },

    #[error("length mismatch: {predictions} predictions vs {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },

    #[error("empty input: {what}")]
    Empty { what: String },

    #[error("inconsistent pair: {detail}")]
    InconsistentPair { detail: String },

    #[error("endpoint unreachable after {attempts} attempts: {message}")]
    EndpointUnreachable { attempts: usize, message: String },

    #[error("quota exceeded: {0}")]
    QuotaExceeded(String),

    #[error("invalid configuration at `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("stage `{stage}` requires `{missing}` to have run first")]
    StageDependencyMissing { stage: String, missing: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    /// Stable upper-snake-case code used on the wire and in error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyInput { .. } => "EMPTY_INPUT",
            Error::UnmappedLabel { .. } => "UNMAPPED_LABEL",
            Error::DuplicateId { .. } => "DUPLICATE_ID",
            Error::EmptyText { .. } => "EMPTY_TEXT",
            Error::ClassTooSmall { .. } => "CLASS_TOO_SMALL",
            Error::CapabilityMissing { .. } => "CAPABILITY_MISSING",
            Error::SingleClassTrain { .. } => "SINGLE_CLASS_TRAIN",
            Error::BackendFailure { .. } => "BACKEND_FAILURE",
            Error::MixedClassInput { .. } => "MIXED_CLASS_INPUT",
            Error::UntrainedClassifier { .. } => "UNTRAINED_CLASSIFIER",
            Error::UnknownGenerator { .. } => "UNKNOWN_GENERATOR",
            Error::TestLeakage { .. } => "TEST_LEAKAGE",
            Error::SamplingExhausted { .. } => "SAMPLING_EXHAUSTED",
            Error::StratumUnderflow { .. } => "STRATUM_UNDERFLOW",
            Error::OriginViolation { .. } => "ORIGIN_VIOLATION",
            Error::UnknownDataset { .. } => "UNKNOWN_DATASET",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::Empty { .. } => "EMPTY",
            Error::InconsistentPair { .. } => "INCONSISTENT_PAIR",
            Error::EndpointUnreachable { .. } => "ENDPOINT_UNREACHABLE",
            Error::QuotaExceeded(_) => "QUOTA_EXCEEDED",
            Error::ConfigInvalid { .. } => "CONFIG_INVALID",
            Error::StageDependencyMissing { .. } => "STAGE_DEPENDENCY_MISSING",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::Io { .. } => "IO_ERROR",
            Error::Format(_) => "FORMAT_ERROR",
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::BackendFailure {
                retryable: true,
                ..
            }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(message: impl Into<String>, retryable: bool) -> Self {
        Error::BackendFailure {
            message: message.into(),
            retryable,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
