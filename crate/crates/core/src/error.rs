use thiserror::Error;

/// Crate-wide error type. Variants map to the failure classes of the
/// pipeline: shape/geometry violations, degenerate inputs, file-format
/// problems, and training divergence.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?} in {context}")]
    ShapeMismatch {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("zero total mass: cannot normalize")]
    ZeroMass,

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("gaze sample ({x}, {y}) outside {width}x{height} frame")]
    OutOfBounds { x: f64, y: f64, width: usize, height: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("config mismatch: model hash {model} vs targets hash {targets}")]
    ConfigMismatch { model: String, targets: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("object placement failed after {attempts} attempts")]
    Placement { attempts: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
