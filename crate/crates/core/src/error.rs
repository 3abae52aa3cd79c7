use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// A byte stream did not follow its declared file format.
    #[error("{format}: {field}: {message}")]
    Format {
        format: &'static str,
        field: String,
        message: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid network spec at layer `{layer}`: {message}")]
    Spec { layer: String, message: String },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{0}` has no spatial output")]
    NonSpatialLayer(String),

    #[error("class index {class} out of range for {count} classes")]
    ClassOutOfRange { class: usize, count: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("offset ({k}, {l}) out of bounds for a {height}x{width} map")]
    OffsetOutOfBounds {
        k: isize,
        l: isize,
        height: usize,
        width: usize,
    },

    #[error("map of {height}x{width} exceeds the SDE size cap of {cap_height}x{cap_width}; use AME for larger maps")]
    SdeTooLarge {
        height: usize,
        width: usize,
        cap_height: usize,
        cap_width: usize,
    },

    #[error("cannot remove layer `{layer}`: {message}")]
    Removal { layer: String, message: String },
}

impl Error {
    pub(crate) fn format(format: &'static str, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn spec(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            layer: layer.into(),
            message: message.into(),
        }
    }
}
