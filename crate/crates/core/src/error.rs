use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector encountered")]
    ZeroVector,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider error (status {status}): {message}")]
    Provider { status: u16, message: String },
    #[error("transcript miss: no recorded response for tag `{0}`")]
    TranscriptMiss(String),
    #[error("transcript stale: request for tag `{0}` differs from the recorded one")]
    TranscriptStale(String),
    #[error("duplicate transcript tag `{0}`")]
    DuplicateTag(String),
    #[error("bad embedding file: {0}")]
    CacheFormat(String),
    #[error("parse failure: {0}")]
    Parse(String),
    #[error("template `{template}` has no value for placeholder `{placeholder}`")]
    Template { template: String, placeholder: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Precondition(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),
    #[error("missing {0}")]
    MissingArtifact(String),
    #[error("nothing to render")]
    NothingToRender,
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
}

/// One problem found while validating a config file, with the key path it applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("{}: {}", i.path, i.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name used in structured CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::MissingColumn(_) => "missing_column",
            Error::EmptyCorpus => "empty_corpus",
            Error::DuplicateId(_) => "duplicate_id",
            Error::UnknownId(_) => "unknown_id",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroVector => "zero_vector",
            Error::Transport { .. } => "transport",
            Error::Provider { .. } => "provider",
            Error::TranscriptMiss(_) => "transcript_miss",
            Error::TranscriptStale(_) => "transcript_stale",
            Error::DuplicateTag(_) => "duplicate_tag",
            Error::CacheFormat(_) => "cache_format",
            Error::Parse(_) => "parse",
            Error::Template { .. } => "template",
            Error::Invalid(_) => "invalid",
            Error::Precondition(_) => "precondition",
            Error::Invariant(_) => "invariant",
            Error::Config(_) => "config",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::NothingToRender => "nothing_to_render",
            Error::Locked(_) => "locked",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
