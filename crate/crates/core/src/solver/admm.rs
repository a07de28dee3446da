//! ADMM for `min ½(‖U‖² + ‖V‖²) + τ‖E‖  s.t.  H{X} = U Vᵀ,  X + E = M`.
//!
//! Each sweep updates, in order, `E`, `X`, `U`, `V`, then the scaled
//! multipliers `Θ` (patch domain) and `Λ` (lifted domain).

use nalgebra::DMatrix;

use super::lifting::Lifting;
use super::lmafit::fit_low_rank;
use super::prox::{group_soft_threshold, soft_threshold_patch};
use super::{ChannelMode, DecompositionResult, FactorPair, SolverConfig, XUpdate};
use crate::error::{AlohaError, Result};
use crate::hankel::Patch;

/// Solves `U (I + μ VᵀV) = μ A V` for `U`.
pub fn update_u(a: &DMatrix<f64>, v: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    solve_factor(a, v, mu)
}

/// Solves `V (I + μ UᵀU) = μ Aᵀ U` for `V`.
pub fn update_v(a: &DMatrix<f64>, u: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    solve_factor(&a.transpose(), u, mu)
}

/// `μ A W (I + μ WᵀW)⁻¹` through a Cholesky solve of the k×k system.
fn solve_factor(a: &DMatrix<f64>, w: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let k = w.ncols();
    let mut gram = w.transpose() * w;
    gram.scale_mut(mu);
    for i in 0..k {
        gram[(i, i)] += 1.0;
    }
    let rhs = (a * w).transpose() * mu;
    let chol = gram
        .cholesky()
        .expect("I + μWᵀW is symmetric positive definite");
    chol.solve(&rhs).transpose()
}

fn frob(patches: &[Patch]) -> f64 {
    patches.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt()
}

fn check_measurements(lifting: &Lifting, measurement: &[Patch]) -> Result<()> {
    if measurement.is_empty() {
        return Err(AlohaError::EmptyInput("no channels in measurement".into()));
    }
    for m in measurement {
        lifting.check_patch(m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(AlohaError::NonFinite("measurement".into()));
        }
    }
    Ok(())
}

/// Factors for the initial low-rank estimate of `lifted`.
fn initial_factors(lifted: &DMatrix<f64>, cfg: &SolverConfig) -> Result<FactorPair> {
    Ok(fit_low_rank(lifted, cfg)?.factors)
}

/// Sparse + low-rank split of one patch or of `C` co-located channel
/// patches. With more than one channel the lifted channels share `U`.
pub fn robust_decompose(measurement: &[Patch], cfg: &SolverConfig) -> Result<DecompositionResult> {
    cfg.validate()?;
    let lifting = cfg.lifting();
    check_measurements(&lifting, measurement)?;
    let channels = measurement.len();
    if cfg.channel_mode == ChannelMode::Single && channels != 1 {
        return Err(AlohaError::InvalidShape(format!(
            "single channel mode given {channels} channels"
        )));
    }

    let (mu, beta) = (cfg.mu, cfg.beta);
    let threshold = match cfg.channel_mode {
        ChannelMode::Independent => cfg.tau / (beta * (channels as f64).sqrt()),
        _ => cfg.tau / beta,
    };
    let weights = lifting.weights();
    let lifted_cols = lifting.lifted_dims().1;

    let mut x: Vec<Patch> = measurement.to_vec();
    let mut e: Vec<Patch> = measurement.iter().map(|m| Patch::zeros(m.nrows(), m.ncols())).collect();
    let mut theta = e.clone();

    let lifted_m = lifting.lift_channels(measurement);
    let FactorPair { mut u, mut v } = initial_factors(&lifted_m, cfg)?;
    let mut lambda = DMatrix::zeros(lifted_m.nrows(), lifted_m.ncols());

    let mut feasibility = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 0..cfg.max_admm_iters {
        sweeps = sweep + 1;

        // E: shrink M − X − Θ
        let residual: Vec<Patch> = (0..channels)
            .map(|c| &measurement[c] - &x[c] - &theta[c])
            .collect();
        e = match cfg.channel_mode {
            ChannelMode::CommonLocation => group_soft_threshold(&residual, threshold)?,
            _ => residual.iter().map(|r| soft_threshold_patch(r, threshold)).collect(),
        };

        // X: blend the Hankel-consistent estimate with the data term
        let target = &u * v.transpose() - &lambda;
        let previous = frob(&x);
        let mut change = 0.0;
        for c in 0..channels {
            let block = target.columns(c * lifted_cols, lifted_cols);
            let data = &measurement[c] - &e[c] - &theta[c];
            let next = match cfg.x_update {
                XUpdate::Averaged => {
                    (lifting.pseudo_inverse(block, &weights) * mu + data * beta) / (mu + beta)
                }
                XUpdate::Exact => {
                    let num = lifting.adjoint(block) * mu + data * beta;
                    num.zip_map(&weights, |n, w| n / (mu * w + beta))
                }
            };
            change += (&next - &x[c]).norm_squared();
            x[c] = next;
        }

        // U, V: k×k solves
        let lifted_x = lifting.lift_channels(&x);
        let a = &lifted_x + &lambda;
        u = update_u(&a, &v, mu);
        v = update_v(&a, &u, mu);

        // multipliers
        for c in 0..channels {
            theta[c] += &x[c] + &e[c] - &measurement[c];
        }
        let gap = &lifted_x - &u * v.transpose();
        lambda += &gap;

        let gap_norm = gap.norm();
        feasibility.push(gap_norm);
        if !gap_norm.is_finite() || !change.is_finite() || theta.iter().any(|t| !t.norm().is_finite()) {
            return Err(AlohaError::Divergence { sweep: sweeps });
        }
        if change.sqrt() / previous.max(1.0) <= cfg.admm_tol {
            converged = true;
            break;
        }
    }

    let final_residual = (0..channels)
        .map(|c| (&measurement[c] - &x[c] - &e[c]).norm_squared())
        .sum::<f64>()
        .sqrt();

    Ok(DecompositionResult {
        clean: x,
        sparse: e,
        factors: FactorPair { u, v },
        iterations_run: sweeps,
        converged,
        final_residual,
        feasibility,
    })
}

/// Single-channel convenience wrapper.
pub fn robust_decompose_single(measurement: &Patch, cfg: &SolverConfig) -> Result<DecompositionResult> {
    let cfg = SolverConfig {
        channel_mode: ChannelMode::Single,
        ..cfg.clone()
    };
    robust_decompose(std::slice::from_ref(measurement), &cfg)
}

/// Completes the patch from the pixels where `known` is true. The sparse
/// term is dropped; unknown pixels follow the Hankel-consistent estimate
/// alone.
pub fn inpaint(measurement: &Patch, known: &DMatrix<bool>, cfg: &SolverConfig) -> Result<Patch> {
    cfg.validate()?;
    let lifting = cfg.lifting();
    check_measurements(&lifting, std::slice::from_ref(measurement))?;
    if known.shape() != measurement.shape() {
        return Err(AlohaError::InvalidShape("mask and patch differ in size".into()));
    }
    let observed = known.iter().filter(|&&k| k).count();
    if observed == 0 {
        return Err(AlohaError::EmptyInput("no known pixels to inpaint from".into()));
    }

    let (mu, beta) = (cfg.mu, cfg.beta);
    let weights = lifting.weights();

    // unknown pixels start at the mean of the known ones
    let mean = measurement
        .iter()
        .zip(known.iter())
        .filter(|(_, &k)| k)
        .map(|(v, _)| v)
        .sum::<f64>()
        / observed as f64;
    let mut x = measurement.zip_map(known, |v, k| if k { v } else { mean });
    let mut theta = Patch::zeros(x.nrows(), x.ncols());

    let init_cfg = SolverConfig {
        lmafit_tol: cfg.inpaint_lmafit_tol,
        ..cfg.clone()
    };
    let FactorPair { mut u, mut v } = initial_factors(&lifting.lift(&x), &init_cfg)?;
    let mut lambda = DMatrix::zeros(u.nrows(), v.nrows());

    for sweep in 0..cfg.max_admm_iters {
        let target = &u * v.transpose() - &lambda;
        let summed = lifting.adjoint(target.as_view());
        let mut next = summed.zip_map(&weights, |s, w| s / w);
        for idx in 0..next.len() {
            if known[idx] {
                let data = beta * (measurement[idx] - theta[idx]);
                next[idx] = match cfg.x_update {
                    XUpdate::Averaged => (mu * next[idx] + data) / (mu + beta),
                    XUpdate::Exact => (mu * summed[idx] + data) / (mu * weights[idx] + beta),
                };
            }
        }
        let change = (&next - &x).norm();
        let previous = x.norm();
        x = next;

        let lifted_x = lifting.lift(&x);
        let a = &lifted_x + &lambda;
        u = update_u(&a, &v, mu);
        v = update_v(&a, &u, mu);

        for idx in 0..x.len() {
            if known[idx] {
                theta[idx] += x[idx] - measurement[idx];
            }
        }
        let gap = &lifted_x - &u * v.transpose();
        lambda += &gap;

        if !change.is_finite() || !gap.norm().is_finite() {
            return Err(AlohaError::Divergence { sweep: sweep + 1 });
        }
        if change / previous.max(1.0) <= cfg.admm_tol {
            break;
        }
    }
    Ok(x)
}
