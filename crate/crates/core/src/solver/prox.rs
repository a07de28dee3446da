//! Shrinkage operators used by the sparse-component update.

use crate::error::{AlohaError, Result};
use crate::hankel::Patch;

/// `sign(x) · max(|x| − lambda, 0)`.
#[inline]
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

pub fn soft_threshold_patch(patch: &Patch, lambda: f64) -> Patch {
    patch.map(|x| soft_threshold(x, lambda))
}

/// Per-pixel shrinkage of the channel vector: each pixel's `C` values are
/// scaled by `max(‖v‖₂ − lambda, 0) / ‖v‖₂`.
pub fn group_soft_threshold(stack: &[Patch], lambda: f64) -> Result<Vec<Patch>> {
    let first = stack
        .first()
        .ok_or_else(|| AlohaError::EmptyInput("group shrinkage needs at least one channel".into()))?;
    let dims = first.shape();
    if stack.iter().any(|p| p.shape() != dims) {
        return Err(AlohaError::InvalidShape(
            "group shrinkage channels differ in size".into(),
        ));
    }
    let mut out: Vec<Patch> = stack.iter().map(|p| Patch::zeros(p.nrows(), p.ncols())).collect();
    for idx in 0..first.len() {
        let norm = stack.iter().map(|p| p[idx] * p[idx]).sum::<f64>().sqrt();
        if norm > lambda {
            let scale = (norm - lambda) / norm;
            for (o, p) in out.iter_mut().zip(stack) {
                o[idx] = p[idx] * scale;
            }
        }
    }
    Ok(out)
}
