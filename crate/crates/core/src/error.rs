use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The `Display` form of every variant starts with a stable, machine-greppable
/// identifier (e.g. `empty-logits`, `dataset-parse:17`). Anything after the
/// identifier is free-form context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-logits")]
    EmptyLogits,
    #[error("shape: {0}")]
    Shape(String),
    #[error("empty-sequence")]
    EmptySequence,
    #[error("non-finite-loss")]
    NonFiniteLoss,

    #[error("empty-corpus")]
    EmptyCorpus,
    #[error("bad-vector-file:{line}")]
    BadVectorFile { line: usize },
    #[error("remap-target-missing:{0}")]
    RemapTargetMissing(String),
    #[error("remap-chain:{0}")]
    RemapChain(String),
    #[error("remap-parse:{line}")]
    RemapParse { line: usize },

    #[error("dataset-parse:{0}")]
    DatasetParse(String),
    #[error("candidate-count ({0})")]
    CandidateCount(String),
    #[error("feature-truncated")]
    FeatureTruncated,
    #[error("feature-magic")]
    FeatureMagic,
    #[error("feature-count:{0}")]
    FeatureCount(u64),
    #[error("feature-nonfinite:{0}")]
    FeatureNonFinite(u64),
    #[error("feature-miss:{0}")]
    FeatureMiss(u64),
    #[error("synthetic-config: {0}")]
    SyntheticConfig(String),
    #[error("oracle-miss")]
    OracleMiss,

    #[error("no-regions")]
    NoRegions,
    #[error("gt-index")]
    GtIndex,

    #[error("config: {0}")]
    Config(String),
    #[error("diverged@{step}")]
    Diverged { step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("prediction-parse:{line}")]
    PredictionParse { line: usize },

    #[error("no-rounds")]
    NoRounds,
    #[error("no-relevant")]
    NoRelevant,
    #[error("prediction-mismatch:{dialog}:{round}")]
    PredictionMismatch { dialog: u64, round: u32 },

    #[error("ensemble-misalign ({0})")]
    EnsembleMisalign(String),
    #[error("ensemble-unnormalized:{dialog}:{round}")]
    EnsembleUnnormalized { dialog: u64, round: u32 },
    #[error("no-inputs")]
    NoInputs,

    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure was caused by bad input (as opposed to something
    /// going wrong while running, like divergence or I/O).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Diverged { .. } | Error::NonFiniteLoss | Error::Io(_)
        )
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
