//! SVD-free low-rank fitting used to seed the ADMM factors.
//!
//! Minimizes `½‖U Vᵀ − Z‖²_F` for a fully observed `Z` by alternating
//! least squares with successive over-relaxation: each sweep fits against
//! the extrapolated target `Z_ω = UVᵀ + ω(Z − UVᵀ)` and the extrapolation
//! is reset whenever it stops paying off. The rank starts at
//! `lmafit_init_rank` and grows by one whenever progress stalls above the
//! tolerance, until the tolerance or the rank cap is reached. Optionally,
//! growth also stops when the pivoted-QR diagonal of the fitted row space
//! shows a drop larger than `qr_drop_ratio` at its tail.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FactorPair, SolverConfig};
use crate::error::{AlohaError, Result};
use crate::hankel::{LiftedMatrix, MultiChannelLifted};

/// Fixed seed for the random starting row space, so fits are reproducible.
const INIT_SEED: u64 = 0x5eed_0f_1a_f17;
/// A sweep whose residual ratio exceeds this counts as stalled.
const STALL_RATIO: f64 = 0.9;
const MAX_EXTRAPOLATION: f64 = 0.9;

/// Anything that can be handed to the initializer.
pub trait LiftedTarget {
    fn target_matrix(&self) -> &DMatrix<f64>;
}

impl LiftedTarget for LiftedMatrix {
    fn target_matrix(&self) -> &DMatrix<f64> {
        self.data()
    }
}

impl LiftedTarget for MultiChannelLifted {
    fn target_matrix(&self) -> &DMatrix<f64> {
        self.data()
    }
}

impl LiftedTarget for DMatrix<f64> {
    fn target_matrix(&self) -> &DMatrix<f64> {
        self
    }
}

#[derive(Debug, Clone)]
pub struct LmafitFit {
    pub factors: FactorPair,
    /// `‖UVᵀ − Z‖_F / ‖Z‖_F` (0 for a zero target).
    pub relative_residual: f64,
    pub iterations: usize,
}

pub fn lmafit_init<T: LiftedTarget + ?Sized>(target: &T, cfg: &SolverConfig) -> Result<FactorPair> {
    fit_low_rank(target.target_matrix(), cfg).map(|fit| fit.factors)
}

/// Orthonormal basis of `z_omega · yᵀ` and the least-squares row factor.
fn als_step(z_omega: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = (z_omega * y.transpose()).qr().q();
    let y = q.transpose() * z_omega;
    (q, y)
}

fn relative_residual(z: &DMatrix<f64>, q: &DMatrix<f64>, y: &DMatrix<f64>, znorm: f64) -> f64 {
    (z - q * y).norm() / znorm
}

/// Magnitudes of the pivoted-QR diagonal of the row factor, descending.
fn qr_diagonal(y: &DMatrix<f64>) -> Vec<f64> {
    let r = y.transpose().col_piv_qr().r();
    let mut d: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    d.sort_by(|a, b| b.total_cmp(a));
    d
}

/// Keeps the dominant `rank`-dimensional part of `q · y`.
fn truncate(q: &DMatrix<f64>, y: &DMatrix<f64>, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = y.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let left = svd.u.as_ref().expect("u requested");
    let right = svd.v_t.as_ref().expect("v_t requested");
    let mut q_new = DMatrix::zeros(q.nrows(), rank);
    let mut y_new = DMatrix::zeros(rank, y.ncols());
    for (slot, &i) in order.iter().take(rank).enumerate() {
        q_new.set_column(slot, &(q * left.column(i)));
        y_new.set_row(slot, &(right.row(i) * svd.singular_values[i]));
    }
    (q_new, y_new)
}

/// Splits `q · y` into `U Vᵀ` with `U` and `V` carrying equal column norms.
fn balance(q: &DMatrix<f64>, y: &DMatrix<f64>) -> FactorPair {
    let k = y.nrows();
    let svd = y.clone().svd(true, true);
    let left = svd.u.expect("u requested");
    let right = svd.v_t.expect("v_t requested");
    let mut u = q * left;
    let mut v = right.transpose();
    for i in 0..k.min(svd.singular_values.len()) {
        let s = svd.singular_values[i].sqrt();
        u.column_mut(i).scale_mut(s);
        v.column_mut(i).scale_mut(s);
    }
    // svd of a k×n row factor with k > n yields fewer components; pad.
    if u.ncols() < k {
        u = u.resize_horizontally(k, 0.0);
        v = v.resize_horizontally(k, 0.0);
    }
    FactorPair { u, v }
}

/// Fits `Z ≈ U Vᵀ` with automatic rank selection.
pub fn fit_low_rank(z: &DMatrix<f64>, cfg: &SolverConfig) -> Result<LmafitFit> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(AlohaError::NonFinite("low-rank fit target".into()));
    }
    let (m, n) = z.shape();
    if m == 0 || n == 0 {
        return Err(AlohaError::EmptyInput("low-rank fit target is empty".into()));
    }
    let max_rank = cfg.effective_max_rank().min(m.min(n)).max(1);
    let mut rank = cfg.lmafit_init_rank.clamp(1, max_rank);
    let znorm = z.norm();
    if znorm == 0.0 {
        return Ok(LmafitFit {
            factors: FactorPair {
                u: DMatrix::zeros(m, rank),
                v: DMatrix::zeros(n, rank),
            },
            relative_residual: 0.0,
            iterations: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(INIT_SEED);
    let y0 = DMatrix::from_fn(rank, n, |_, _| rng.gen_range(-1.0..1.0));
    let (mut q, mut y) = als_step(z, &y0);
    let mut res = relative_residual(z, &q, &y, znorm);
    let mut iterations = 1;

    let mut alf = 0.0;
    let mut increment = 1.0;
    let mut adapt_rank = true;

    while iterations < cfg.lmafit_max_iters && res > cfg.lmafit_tol {
        iterations += 1;
        let approx = &q * &y;
        let z_omega = &approx + (z - &approx) * (1.0 + alf);
        let (q_new, y_new) = als_step(&z_omega, &y);
        let res_new = relative_residual(z, &q_new, &y_new, znorm);
        let ratio = res_new / res;

        if ratio >= 1.0 && alf > 0.0 {
            // extrapolation overshot: drop it and redo from the last iterate
            increment = (0.1 * alf).max(0.1 * increment);
            alf = 0.0;
            continue;
        }
        q = q_new;
        y = y_new;
        res = res_new;
        if ratio > 0.7 {
            increment = increment.max(0.25 * alf);
            alf = (alf + increment).min(MAX_EXTRAPOLATION);
        }
        if res <= cfg.lmafit_tol {
            break;
        }
        if ratio <= STALL_RATIO {
            continue;
        }
        if adapt_rank && rank < max_rank {
            let tail_drop = match cfg.qr_drop_ratio {
                Some(ratio) if rank >= 2 => {
                    let diag = qr_diagonal(&y);
                    diag[rank - 2] > ratio * diag[rank - 1].max(f64::MIN_POSITIVE)
                }
                _ => false,
            };
            if tail_drop {
                rank -= 1;
                (q, y) = truncate(&q, &y, rank);
                res = relative_residual(z, &q, &y, znorm);
                adapt_rank = false;
            } else {
                rank += 1;
                q = q.resize_horizontally(rank, 0.0);
                let extra = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0) * 1e-3);
                y = y.resize_vertically(rank, 0.0);
                y.set_row(rank - 1, &extra.row(0));
                alf = 0.0;
            }
        } else if ratio > 0.999 {
            break;
        }
    }

    Ok(LmafitFit {
        factors: balance(&q, &y),
        relative_residual: res,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numerical_rank(m: &DMatrix<f64>, rel: f64) -> usize {
        let sv = m.singular_values();
        let top = sv.max();
        sv.iter().filter(|&&s| s > rel * top).count()
    }

    fn tight(max_rank: usize) -> SolverConfig {
        SolverConfig {
            lmafit_tol: 1e-10,
            lmafit_max_rank: Some(max_rank),
            ..SolverConfig::default()
        }
    }

    #[test]
    fn exact_rank_one_is_fit_at_rank_one() {
        let u = DMatrix::from_fn(225, 1, |i, _| 0.2 + (i as f64 * 0.05).sin().abs());
        let v = DMatrix::from_fn(121, 1, |j, _| 1.0 + (j as f64 * 0.3).cos());
        let z = &u * v.transpose();
        assert_eq!(numerical_rank(&z, 1e-10), 1);
        let fit = fit_low_rank(&z, &tight(30)).unwrap();
        assert_eq!(fit.factors.rank(), 1);
        assert!(fit.relative_residual <= 1e-10, "{}", fit.relative_residual);
        assert!((fit.factors.product() - &z).norm() / z.norm() <= 1e-10);
    }

    #[test]
    fn zero_target_is_a_fixed_point() {
        let z = DMatrix::zeros(40, 12);
        let fit = fit_low_rank(&z, &tight(3)).unwrap();
        assert_eq!(fit.relative_residual, 0.0);
        assert!(fit.factors.u.iter().all(|&v| v == 0.0));
        assert!(fit.factors.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detects_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(225, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(121, 3, |_, _| rng.gen_range(-1.0..1.0));
        let z = &a * b.transpose();
        assert_eq!(numerical_rank(&z, 1e-10), 3);
        let fit = fit_low_rank(&z, &tight(10)).unwrap();
        assert_eq!(fit.factors.rank(), 3);
        assert!(fit.relative_residual <= 1e-10);
        assert_eq!(numerical_rank(&fit.factors.product(), 1e-8), 3);
    }

    #[test]
    fn rank_is_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = DMatrix::from_fn(60, 30, |_, _| rng.gen_range(-1.0..1.0));
        let fit = fit_low_rank(&z, &tight(4)).unwrap();
        assert!(fit.factors.rank() <= 4);
        assert!(fit.relative_residual > 0.2);
    }

    #[test]
    fn stops_at_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(80, 4, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(40, 4, |_, _| rng.gen_range(-1.0..1.0));
        let noise = DMatrix::from_fn(80, 40, |_, _| rng.gen_range(-0.01..0.01));
        let z = &a * b.transpose() + noise;
        let cfg = SolverConfig {
            lmafit_tol: 0.05,
            lmafit_max_rank: Some(10),
            ..SolverConfig::default()
        };
        let fit = fit_low_rank(&z, &cfg).unwrap();
        assert!(fit.relative_residual <= 0.05);
        assert!(fit.factors.rank() <= 4);
    }

    #[test]
    fn qr_drop_stops_growth_at_the_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(90, 2, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(50, 2, |_, _| rng.gen_range(-1.0..1.0));
        let floor = DMatrix::from_fn(90, 50, |_, _| rng.gen_range(-1e-4..1e-4));
        let z = &a * b.transpose() + floor;
        let cfg = SolverConfig {
            lmafit_tol: 1e-12,
            lmafit_max_rank: Some(12),
            qr_drop_ratio: Some(10.0),
            ..SolverConfig::default()
        };
        assert_eq!(fit_low_rank(&z, &cfg).unwrap().factors.rank(), 2);
        // without the test the rank runs to the cap
        let free = SolverConfig { qr_drop_ratio: None, ..cfg };
        assert_eq!(fit_low_rank(&z, &free).unwrap().factors.rank(), 12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut z = DMatrix::from_element(5, 5, 1.0);
        z[(2, 3)] = f64::NAN;
        assert!(matches!(
            fit_low_rank(&z, &tight(2)),
            Err(AlohaError::NonFinite(_))
        ));
    }

    #[test]
    fn factors_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(50, 2, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(20, 2, |_, _| rng.gen_range(-10.0..10.0));
        let fit = fit_low_rank(&(&a * b.transpose()), &tight(5)).unwrap();
        for i in 0..fit.factors.rank() {
            let nu = fit.factors.u.column(i).norm();
            let nv = fit.factors.v.column(i).norm();
            assert!((nu - nv).abs() <= 1e-8 * nu.max(1.0));
        }
    }
}
