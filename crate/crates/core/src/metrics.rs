//! PSNR and error norms.
//!
//! The peak is the reference's max magnitude, not a fixed 1.0, and all
//! channels are pooled into a single RMSE.

use std::fmt::Write as _;

use crate::error::{AlohaError, Result};
use crate::hankel::Patch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// `f64::INFINITY` when the images are identical.
    pub psnr_db: f64,
    pub rmse: f64,
    pub linf: f64,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl MetricReport {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "psnr_db={}", fmt_db(self.psnr_db));
        let _ = writeln!(s, "rmse={:.6e}", self.rmse);
        let _ = writeln!(s, "linf={:.6e}", self.linf);
        s
    }

    pub fn psnr_field(&self) -> String {
        fmt_db(self.psnr_db)
    }
}

/// Header for [`CsvRow`].
pub const CSV_HEADER: &str = "image,noise_kind,p,seed,method,psnr_db,seconds";

#[derive(Debug, Clone)]
pub struct CsvRow {
    pub image: String,
    pub noise_kind: String,
    pub p: Option<f64>,
    pub seed: Option<u64>,
    pub method: String,
    pub psnr_db: f64,
    pub seconds: f64,
}

impl CsvRow {
    pub fn to_line(&self) -> String {
        let field = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        format!(
            "{},{},{},{},{},{},{:.3}",
            field(&self.image),
            field(&self.noise_kind),
            self.p.map(|p| p.to_string()).unwrap_or_default(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            field(&self.method),
            fmt_db(self.psnr_db),
            self.seconds
        )
    }
}

fn check_dims(reference: &[Patch], candidate: &[Patch]) -> Result<()> {
    if reference.is_empty() {
        return Err(AlohaError::EmptyInput("no channels to compare".into()));
    }
    if reference.len() != candidate.len()
        || reference.iter().zip(candidate).any(|(a, b)| a.shape() != b.shape())
    {
        return Err(AlohaError::InvalidShape(
            "reference and candidate differ in size or channel count".into(),
        ));
    }
    Ok(())
}

/// Root-mean-square difference over all pixels of all channels.
pub fn rmse(a: &[Patch], b: &[Patch]) -> Result<f64> {
    check_dims(a, b)?;
    let n: usize = a.iter().map(|p| p.len()).sum();
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    Ok((sq / n as f64).sqrt())
}

pub fn psnr(reference: &[Patch], candidate: &[Patch]) -> Result<MetricReport> {
    let rmse = rmse(reference, candidate)?;
    let peak = reference.iter().map(|p| p.amax()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(AlohaError::UndefinedPeak);
    }
    let linf = reference
        .iter()
        .zip(candidate)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    let psnr_db = if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (peak / rmse).log10()
    };
    Ok(MetricReport { psnr_db, rmse, linf })
}

/// PSNR of a single-channel pair.
pub fn psnr_single(reference: &Patch, candidate: &Patch) -> Result<f64> {
    Ok(psnr(std::slice::from_ref(reference), std::slice::from_ref(candidate))?.psnr_db)
}
