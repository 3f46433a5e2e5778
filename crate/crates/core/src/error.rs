use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("shape {shape:?} cannot hold {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },

    #[error("{0} of an empty input")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer {layer}: {reason}")]
    Layer { layer: String, reason: String },

    #[error("backward pass for {0} has no cached forward state")]
    MissingCache(&'static str),

    #[error("grid {dim}: (extent {extent} - patch {patch}) is not a multiple of stride {stride}; pad by {needed} more pixels")]
    GridRemainder {
        dim: &'static str,
        extent: usize,
        patch: usize,
        stride: usize,
        needed: usize,
    },

    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    NonFinite {
        epoch: usize,
        step: usize,
        what: &'static str,
    },

    #[error("normalization needs a non-constant dataset (min == max == {0})")]
    ConstantData(f64),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
