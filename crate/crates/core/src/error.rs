use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    /// The target puts mass on an action the behavior policy never takes.
    #[error("coverage violation at t={t}, s={s}, a={a}: target {target_prob} > 0 but behavior is 0")]
    Coverage {
        t: usize,
        s: usize,
        a: usize,
        target_prob: f64,
    },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("enumeration would visit {required} weighted paths, above the cap of {cap}")]
    EnumerationCap { required: f64, cap: usize },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("dataset line {line}: {detail}")]
    Dataset { line: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for requests that are well formed but cannot be carried out
    /// (exceeded caps, missing ground truth).
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::EnumerationCap { .. } | Error::Infeasible(_) => true,
            Error::Episode { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}
