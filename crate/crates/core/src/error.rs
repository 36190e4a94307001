use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("malformed line {line}: missing tab separator between source and target")]
    MalformedLine { line: usize },
    #[error("empty source at line {line}")]
    EmptySource { line: usize },
    #[error("empty target at line {line}")]
    EmptyTarget { line: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("diversity label requested but the model was configured without it")]
    LabelDisabled,
    #[error("every decoder position is masked")]
    AllPositionsMasked,
    #[error("empty token sequence")]
    EmptySequence,
    #[error("no {n}-grams in the corpus")]
    NoNgrams { n: usize },
    #[error("empty {0} lexicon")]
    EmptyLexicon(&'static str),
    #[error("missing required config key `{0}`")]
    MissingKey(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step}: {breakdown}\n{batch}")]
    NonFiniteLoss {
        step: u64,
        breakdown: String,
        batch: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::MissingKey(_)
                | Error::Config { .. }
                | Error::LabelDisabled
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
