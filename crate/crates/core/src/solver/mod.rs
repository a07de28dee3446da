//! Sparse + low-rank decomposition of lifted patches.
//!
//! [`lmafit_init`] produces the starting factors, [`robust_decompose`]
//! runs the ADMM sweeps, and [`inpaint`] is the variant with known
//! corruption sites (no sparse term).

mod admm;
mod lifting;
mod lmafit;
mod prox;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AlohaError, Result};
use crate::hankel::{HankelShape, Patch};

pub use admm::{inpaint, robust_decompose, robust_decompose_single, update_u, update_v};
pub use lifting::Lifting;
pub use lmafit::{fit_low_rank, lmafit_init, LiftedTarget, LmafitFit};
pub use prox::{group_soft_threshold, soft_threshold, soft_threshold_patch};

/// How the sparse component of a multi-channel patch is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// One channel per solve.
    #[default]
    Single,
    /// Channels share the low-rank factors; `E` is l1-penalized per entry
    /// with weight `τ/√C`, which keeps the penalty on the same scale as the
    /// l1,2 norm of `C` channels.
    Independent,
    /// Channels share the low-rank factors; `E` is l1,2-penalized so that
    /// corruption sites are shared across channels.
    CommonLocation,
}

/// Closed form used for the `X` subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XUpdate {
    /// `(μ·H†{UVᵀ − Λ} + β(M − E − Θ)) / (μ + β)`.
    #[default]
    Averaged,
    /// `(μ·H*{UVᵀ − Λ} + β(M − E − Θ)) / (μ·w + β)` with `w` the pixel
    /// multiplicity; the exact minimizer of the subproblem.
    Exact,
}

/// Whether patches are lifted before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    #[default]
    Hankel,
    /// Factorize the raw patch matrix (plain RPCA). Only for ablations.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sparsity weight.
    pub tau: f64,
    /// Penalty on `H{X} = U Vᵀ`.
    pub mu: f64,
    /// Penalty on `X + E = M`.
    pub beta: f64,
    pub max_admm_iters: usize,
    /// Stop when `‖X⁺ − X‖_F / max(‖X‖_F, 1)` falls to this level.
    pub admm_tol: f64,
    /// Relative residual target of the initial factorization.
    pub lmafit_tol: f64,
    /// Residual target of the initial factorization in [`inpaint`], where the
    /// fitted patch carries no impulses.
    pub inpaint_lmafit_tol: f64,
    pub lmafit_init_rank: usize,
    /// `None` means `floor(min(lifted dims) / 4)`.
    pub lmafit_max_rank: Option<usize>,
    pub lmafit_max_iters: usize,
    /// When set, a ratio between the last two pivoted-QR diagonal magnitudes
    /// above this value ends rank growth and drops the last component.
    pub qr_drop_ratio: Option<f64>,
    pub channel_mode: ChannelMode,
    pub filter: HankelShape,
    pub x_update: XUpdate,
    pub structure: Structure,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            mu: 1.0,
            beta: 1.0,
            max_admm_iters: 500,
            admm_tol: 1e-4,
            lmafit_tol: 0.2,
            inpaint_lmafit_tol: 1e-2,
            lmafit_init_rank: 1,
            lmafit_max_rank: None,
            lmafit_max_iters: 100,
            qr_drop_ratio: None,
            channel_mode: ChannelMode::Single,
            filter: HankelShape {
                patch_rows: 25,
                patch_cols: 25,
                filt_rows: 11,
                filt_cols: 11,
            },
            x_update: XUpdate::Averaged,
            structure: Structure::Hankel,
        }
    }
}

impl SolverConfig {
    pub fn with_shape(filter: HankelShape) -> Self {
        Self {
            filter,
            ..Self::default()
        }
    }

    pub fn lifting(&self) -> Lifting {
        match self.structure {
            Structure::Hankel => Lifting::Hankel(self.filter),
            Structure::Raw => Lifting::Raw {
                rows: self.filter.patch_rows,
                cols: self.filter.patch_cols,
            },
        }
    }

    /// Rank cap actually used by the initializer.
    pub fn effective_max_rank(&self) -> usize {
        let (rows, cols) = self.lifting().lifted_dims();
        self.lmafit_max_rank
            .unwrap_or_else(|| (rows.min(cols) / 4).max(1))
            .max(self.lmafit_init_rank)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        let bad = |msg: String| Err(AlohaError::InvalidConfig(msg));
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be a finite value >= 0, got {}", self.tau));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.admm_tol > 0.0) {
            return bad(format!("admm_tol must be positive, got {}", self.admm_tol));
        }
        if !(self.lmafit_tol > 0.0) {
            return bad(format!("lmafit_tol must be positive, got {}", self.lmafit_tol));
        }
        if !(self.inpaint_lmafit_tol > 0.0) {
            return bad(format!(
                "inpaint_lmafit_tol must be positive, got {}",
                self.inpaint_lmafit_tol
            ));
        }
        if self.lmafit_init_rank == 0 {
            return bad("lmafit_init_rank must be at least 1".into());
        }
        if let Some(r) = self.qr_drop_ratio {
            if !(r > 1.0) {
                return bad(format!("qr_drop_ratio must exceed 1, got {r}"));
            }
        }
        let (rows, cols) = self.lifting().lifted_dims();
        if self.lmafit_init_rank > rows.min(cols) {
            return bad(format!(
                "lmafit_init_rank {} exceeds lifted dims {rows}x{cols}",
                self.lmafit_init_rank
            ));
        }
        if let Some(max) = self.lmafit_max_rank {
            if max > cols || max < self.lmafit_init_rank {
                return bad(format!(
                    "lmafit_max_rank {max} must lie in {}..={cols}",
                    self.lmafit_init_rank
                ));
            }
        }
        Ok(())
    }
}

/// Low-rank factors with `L = U Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    /// Low-rank part `X`, one patch per channel.
    pub clean: Vec<Patch>,
    /// Sparse part `E`, one patch per channel.
    pub sparse: Vec<Patch>,
    pub factors: FactorPair,
    pub iterations_run: usize,
    pub converged: bool,
    /// `‖M − X − E‖_F` over all channels.
    pub final_residual: f64,
    /// `‖H{X} − U Vᵀ‖_F` after every sweep.
    pub feasibility: Vec<f64>,
}
