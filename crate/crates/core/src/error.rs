use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vector has zero L2 norm")]
    ZeroNorm,

    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("input to {0} is not L2-normalized")]
    NotNormalized(&'static str),

    #[error("patch source {source_h}x{source_w} is smaller than the {rect_h}x{rect_w} rectangle")]
    PatchSourceTooSmall {
        source_h: usize,
        source_w: usize,
        rect_h: usize,
        rect_w: usize,
    },
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
