use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("ingestion error: missing field `{0}`")]
    MissingField(String),

    #[error("standardizer fitting error: {0}")]
    Fit(String),

    #[error("fold assignment error: {0}")]
    Assignment(String),

    #[error("weather fetch failed (retryable): {0}")]
    Fetch(String),

    #[error("no weather fixture for key {key} in {}", dir.display())]
    FixtureMiss { key: String, dir: PathBuf },

    #[error("malformed weather response: {message}")]
    WeatherParse { message: String, raw: String },

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("{0}")]
    LpipsWeights(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("preprocess config mismatch: checkpoint was trained with {expected}, data was prepared with {found}")]
    PreprocessMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
