//! Impulse-noise removal by sparse + low-rank decomposition of image
//! patches lifted to 2-D block-Hankel matrices.
//!
//! Each overlapping patch `M` is split as `M = X + E` where the lifted
//! matrix of `X` is low rank and `E` is sparse. The low-rank part is
//! carried in factored form `U Vᵀ`, initialized by an SVD-free
//! alternating least-squares fit, and refined by ADMM. Clean patches are
//! averaged back into the image.

pub mod cli;
pub mod error;
pub mod hankel;
pub mod imageio;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod solver;

pub use error::{AlohaError, Result};
pub use hankel::{HankelShape, LiftedMatrix, MultiChannelLifted, Patch};
pub use solver::{ChannelMode, DecompositionResult, FactorPair, SolverConfig};
