use thiserror::Error;

use crate::imageio::ImageError;

pub type Result<T> = std::result::Result<T, AlohaError>;

#[derive(Debug, Error)]
pub enum AlohaError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A NaN or infinity appeared inside the ADMM iteration.
    #[error("solver diverged at sweep {sweep}")]
    Divergence { sweep: usize },

    #[error("reference image has zero peak; PSNR is undefined")]
    UndefinedPeak,

    /// Failure while solving the patch whose top-left corner is `origin`.
    #[error("patch at origin ({}, {}): {source}", origin.0, origin.1)]
    Patch {
        origin: (usize, usize),
        #[source]
        source: Box<AlohaError>,
    },

    #[error(transparent)]
    Image(#[from] ImageError),
}

impl AlohaError {
    /// Strips any patch-origin wrapping.
    pub fn root(&self) -> &AlohaError {
        match self {
            AlohaError::Patch { source, .. } => source.root(),
            other => other,
        }
    }
}
