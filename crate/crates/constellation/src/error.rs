//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {op}: left {left:?}, right {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity error: scene has {count} objects but only {capacity} slots")]
    Capacity { count: usize, capacity: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dataset schema error: {0}")]
    Schema(String),

    #[error("dataset record {index} invalid: {reason}")]
    Record { index: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown symbol '{symbol}'; vocabulary: {available}")]
    UnknownSymbol { symbol: String, available: String },

    #[error("abstraction failure: {0}")]
    Abstraction(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
