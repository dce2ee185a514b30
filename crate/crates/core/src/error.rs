use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("audio contains no samples")]
    EmptyAudio,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("window [{start}s, {end}s) lies outside a buffer of {available}s")]
    OutOfRange { start: f64, end: f64, available: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty exemplar database: {0}")]
    EmptyDatabase(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status used by the command-line front end.
    ///
    /// 1 = usage/configuration, 2 = data, 3 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
