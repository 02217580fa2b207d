use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("unknown class ids in label map: {ids:?}")]
    UnknownClasses { ids: Vec<u8> },

    #[error("invalid class table: {0}")]
    ClassTable(String),

    #[error("invalid mask: {0}")]
    Mask(String),

    #[error("composition error: {0}")]
    Composition(String),

    #[error("overlay error: mask frame {mask:?} does not match base frame {base:?}")]
    Overlay {
        mask: (usize, usize),
        base: (usize, usize),
    },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("no masks of class {0} in library")]
    Sampling(u8),

    #[error("strategy error: {0}")]
    Strategy(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no palette entry for class id {0}")]
    Render(u8),

    #[error("generator error: {0}")]
    Generator(#[from] GeneratorError),

    #[error("mixing error: {0}")]
    Mix(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failures at the external generator process boundary.
#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("command template must contain {{in}} and {{out}}: {0:?}")]
    Template(String),

    #[error("could not launch generator: {0}")]
    Spawn(String),

    #[error("generator exited with code {code:?}; stderr: {stderr}")]
    Exit { code: Option<i32>, stderr: String },

    #[error("generator timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("generator output is not a valid P6 image: {0}")]
    Malformed(String),

    #[error("contract violation: generator produced {got:?} for a {expected:?} label map")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
