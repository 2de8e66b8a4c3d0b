use std::path::PathBuf;

/// Errors produced anywhere in the texture pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward called on a non-scalar tensor of shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{path}:{line}: {msg}")]
    ObjParse { path: PathBuf, line: usize, msg: String },

    #[error("non-quad face with {sides} vertices (line {line})")]
    NonQuad { line: usize, sides: usize },

    #[error("non-manifold edge ({0}, {1}) shared by more than two faces")]
    NonManifold(u32, u32),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("hierarchy links missing between levels {0} and {1}")]
    MissingLinks(usize, usize),

    #[error("level mismatch: features have {got} rows, level {level} has {expected} faces")]
    LevelMismatch { level: usize, got: usize, expected: usize },

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty foreground: {0}")]
    EmptyForeground(&'static str),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
