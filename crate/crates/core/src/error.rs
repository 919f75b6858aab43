use thiserror::Error;

/// Errors surfaced by the avatar pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("degenerate triangle {index}: area {area:.3e} below threshold")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("count mismatch in {path}: expected {expected}, got {actual}")]
    CountMismatch {
        path: String,
        expected: usize,
        actual: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("topology hash mismatch: checkpoint {stored}, loaded topology {actual}")]
    HashMismatch { stored: String, actual: String },

    #[error("rasterizer backward called without retained forward state")]
    StateMissing,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {detail}")]
    Image { path: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
