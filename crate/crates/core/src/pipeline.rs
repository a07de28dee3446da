//! Whole-image denoising over a grid of overlapping patches.
//!
//! Patches are solved independently (in parallel when asked) and folded
//! into a sum/count accumulator in row-major origin order, so the output
//! does not depend on how the solves were scheduled.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AlohaError, Result};
use crate::hankel::Patch;
use crate::noise::{amf_detect, AmfParams, Mask, NoiseKind};
use crate::solver::{inpaint, robust_decompose, ChannelMode, SolverConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub image_rows: usize,
    pub image_cols: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub stride_rows: usize,
    pub stride_cols: usize,
    /// Top-left corners, sorted row-major.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        let clamped = o.min(len - patch);
        if out.last() != Some(&clamped) {
            out.push(clamped);
        }
        if o + patch >= len {
            break;
        }
        o += stride;
    }
    out
}

/// Overlapping tiling with the last patch on each axis clamped to the edge.
pub fn plan_grid(
    image_dims: (usize, usize),
    patch_dims: (usize, usize),
    stride: (usize, usize),
) -> Result<PatchGrid> {
    let (rows, cols) = image_dims;
    let (pr, pc) = patch_dims;
    if pr == 0 || pc == 0 || pr > rows || pc > cols {
        return Err(AlohaError::InvalidShape(format!(
            "patch {pr}x{pc} does not fit in image {rows}x{cols}"
        )));
    }
    if stride.0 == 0 || stride.1 == 0 || stride.0 > pr || stride.1 > pc {
        return Err(AlohaError::InvalidConfig(format!(
            "stride {}x{} must lie between 1 and the patch size",
            stride.0, stride.1
        )));
    }
    let row_origins = axis_origins(rows, pr, stride.0);
    let col_origins = axis_origins(cols, pc, stride.1);
    let origins = row_origins
        .iter()
        .flat_map(|&r| col_origins.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchGrid {
        image_rows: rows,
        image_cols: cols,
        patch_rows: pr,
        patch_cols: pc,
        stride_rows: stride.0,
        stride_cols: stride.1,
        origins,
    })
}

/// Default stride: half the patch size.
pub fn default_stride(patch: usize) -> usize {
    (patch / 2).max(1)
}

/// Sum/count buffers for overlap averaging. Contributions are held until
/// [`Accumulator::finish`] and then folded in origin order.
#[derive(Debug, Clone)]
pub struct Accumulator {
    rows: usize,
    cols: usize,
    channels: usize,
    pending: BTreeMap<(usize, usize), Vec<Patch>>,
}

impl Accumulator {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
            pending: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, origin: (usize, usize), patches: Vec<Patch>) {
        debug_assert_eq!(patches.len(), self.channels);
        self.pending.insert(origin, patches);
    }

    /// Averaged image per channel plus the per-pixel count.
    pub fn finish(self) -> (Vec<Patch>, nalgebra::DMatrix<u32>) {
        let mut sum = vec![Patch::zeros(self.rows, self.cols); self.channels];
        let mut count = nalgebra::DMatrix::<u32>::zeros(self.rows, self.cols);
        for (&(r0, c0), patches) in &self.pending {
            let (pr, pc) = patches[0].shape();
            for (s, p) in sum.iter_mut().zip(patches) {
                let mut view = s.view_mut((r0, c0), (pr, pc));
                view += p;
            }
            count.view_mut((r0, c0), (pr, pc)).add_scalar_mut(1);
        }
        for s in &mut sum {
            s.zip_apply(&count, |v, n| {
                if n > 0 {
                    *v /= n as f64
                }
            });
        }
        (sum, count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseMode {
    /// Robust decomposition of every patch.
    Rvin,
    /// AMF detection followed by inpainting of the flagged pixels.
    SaltPepper,
}

impl From<NoiseKind> for DenoiseMode {
    fn from(kind: NoiseKind) -> Self {
        match kind {
            NoiseKind::Rvin => DenoiseMode::Rvin,
            NoiseKind::SaltPepper => DenoiseMode::SaltPepper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseOptions {
    pub mode: DenoiseMode,
    pub amf: AmfParams,
    /// Worker count; `None` uses rayon's global pool.
    pub threads: Option<usize>,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        Self {
            mode: DenoiseMode::Rvin,
            amf: AmfParams::default(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    /// Restored channels, clipped to `[0, 1]` before undoing any rescale.
    pub clean: Vec<Patch>,
    /// Averaged `|E|` (rvin) or `|M − X|` on detected pixels (salt/pepper),
    /// in normalized units.
    pub sparse: Vec<Patch>,
    /// Salt/pepper detection masks, one per channel.
    pub detected: Option<Vec<Mask>>,
    pub min_count: u32,
}

/// Affine map into `[0, 1]`, identity when the data already fits.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Normalization {
    offset: f64,
    scale: f64,
}

impl Normalization {
    fn fit(channels: &[Patch]) -> Self {
        let lo = channels.iter().map(|p| p.min()).fold(f64::INFINITY, f64::min);
        let hi = channels.iter().map(|p| p.max()).fold(f64::NEG_INFINITY, f64::max);
        if lo >= 0.0 && hi <= 1.0 {
            Self { offset: 0.0, scale: 1.0 }
        } else if hi > lo {
            Self { offset: lo, scale: hi - lo }
        } else {
            Self { offset: lo, scale: 1.0 }
        }
    }

    fn forward(&self, p: &Patch) -> Patch {
        if self.offset == 0.0 && self.scale == 1.0 {
            return p.clone();
        }
        p.map(|v| (v - self.offset) / self.scale)
    }

    fn inverse(&self, p: &Patch) -> Patch {
        if self.offset == 0.0 && self.scale == 1.0 {
            return p.clone();
        }
        p.map(|v| v * self.scale + self.offset)
    }
}

fn extract(channels: &[Patch], origin: (usize, usize), dims: (usize, usize)) -> Vec<Patch> {
    channels
        .iter()
        .map(|c| c.view(origin, dims).into_owned())
        .collect()
}

/// Clean and sparse layers of one patch across all channels.
fn solve_rvin(patches: &[Patch], cfg: &SolverConfig) -> Result<(Vec<Patch>, Vec<Patch>)> {
    if cfg.channel_mode == ChannelMode::Single {
        let mut clean = Vec::with_capacity(patches.len());
        let mut sparse = Vec::with_capacity(patches.len());
        for p in patches {
            let mut out = robust_decompose(std::slice::from_ref(p), cfg)?;
            clean.push(out.clean.pop().expect("one channel"));
            sparse.push(out.sparse.pop().expect("one channel").abs());
        }
        Ok((clean, sparse))
    } else {
        let out = robust_decompose(patches, cfg)?;
        Ok((out.clean, out.sparse.iter().map(|e| e.abs()).collect()))
    }
}

fn solve_inpaint(
    patches: &[Patch],
    masks: &[Patch],
    cfg: &SolverConfig,
) -> Result<(Vec<Patch>, Vec<Patch>)> {
    let mut clean = Vec::with_capacity(patches.len());
    let mut sparse = Vec::with_capacity(patches.len());
    for (p, noisy) in patches.iter().zip(masks) {
        let known = noisy.map(|v| v == 0.0);
        let x = if known.iter().all(|&k| k) {
            p.clone()
        } else {
            inpaint(p, &known, cfg)?
        };
        sparse.push((p - &x).component_mul(noisy).abs());
        clean.push(x);
    }
    Ok((clean, sparse))
}

/// Denoises a one- or multi-channel image given as `rows × cols` planes.
pub fn denoise_image(
    image: &[Patch],
    cfg: &SolverConfig,
    grid: &PatchGrid,
    options: &DenoiseOptions,
) -> Result<DenoiseOutput> {
    cfg.validate()?;
    let first = image
        .first()
        .ok_or_else(|| AlohaError::EmptyInput("image has no channels".into()))?;
    let dims = first.shape();
    if image.iter().any(|p| p.shape() != dims) {
        return Err(AlohaError::InvalidShape("channels differ in size".into()));
    }
    if image.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(AlohaError::NonFinite("input image".into()));
    }
    if dims != (grid.image_rows, grid.image_cols) {
        return Err(AlohaError::InvalidShape(format!(
            "grid planned for {}x{}, image is {}x{}",
            grid.image_rows, grid.image_cols, dims.0, dims.1
        )));
    }
    let patch_dims = (grid.patch_rows, grid.patch_cols);
    if patch_dims != cfg.filter.patch_dims() {
        return Err(AlohaError::InvalidShape(format!(
            "grid patch {}x{} differs from solver patch {}x{}",
            patch_dims.0, patch_dims.1, cfg.filter.patch_rows, cfg.filter.patch_cols
        )));
    }

    let norm = Normalization::fit(image);
    let normalized: Vec<Patch> = image.iter().map(|p| norm.forward(p)).collect();

    let detected = match options.mode {
        DenoiseMode::Rvin => None,
        DenoiseMode::SaltPepper => Some(
            normalized
                .iter()
                .map(|p| amf_detect(p, &options.amf))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let noisy_maps: Option<Vec<Patch>> = detected
        .as_ref()
        .map(|ms| ms.iter().map(|m| m.map(|b| if b { 1.0 } else { 0.0 })).collect());

    let solve = |origin: &(usize, usize)| -> Result<((usize, usize), Vec<Patch>, Vec<Patch>)> {
        let patches = extract(&normalized, *origin, patch_dims);
        let solved = match &noisy_maps {
            None => solve_rvin(&patches, cfg),
            Some(maps) => solve_inpaint(&patches, &extract(maps, *origin, patch_dims), cfg),
        };
        let (clean, sparse) = solved.map_err(|e| AlohaError::Patch {
            origin: *origin,
            source: Box::new(e),
        })?;
        Ok((*origin, clean, sparse))
    };

    let results: Vec<_> = match options.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| AlohaError::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| grid.origins.par_iter().map(solve).collect())
        }
        None => grid.origins.par_iter().map(solve).collect(),
    };

    let channels = image.len();
    let mut clean_acc = Accumulator::new(dims.0, dims.1, channels);
    let mut sparse_acc = Accumulator::new(dims.0, dims.1, channels);
    for r in results {
        let (origin, clean, sparse) = r?;
        clean_acc.add(origin, clean);
        sparse_acc.add(origin, sparse);
    }
    let (clean, count) = clean_acc.finish();
    let (sparse, _) = sparse_acc.finish();
    let min_count = count.min();
    if min_count == 0 {
        return Err(AlohaError::InvalidShape("patch grid leaves pixels uncovered".into()));
    }
    let clean = clean
        .iter()
        .map(|p| norm.inverse(&p.map(|v| v.clamp(0.0, 1.0))))
        .collect();
    Ok(DenoiseOutput {
        clean,
        sparse,
        detected,
        min_count,
    })
}
