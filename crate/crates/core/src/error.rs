use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter shapes are not congruent: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite {what} during training (episode {episode}, step {step})")]
    Diverged {
        what: &'static str,
        episode: usize,
        step: usize,
    },

    #[error("the topological map has no nodes")]
    EmptyMap,

    #[error("unknown map node {0}")]
    UnknownNode(u64),

    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,

    #[error("episode already finished; call reset first")]
    EpisodeDone,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed parameter file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { context, expected, got }
    }
}
