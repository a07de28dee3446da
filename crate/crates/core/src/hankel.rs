//! Block-Hankel lifting of image patches.
//!
//! Index convention. A patch has `patch_rows × patch_cols` pixels and the
//! filter is `filt_rows × filt_cols`. Write `rw = patch_rows - filt_rows + 1`
//! for the number of window positions down a column. The lifted entry at
//! row `r`, column `c` is
//!
//! ```text
//! a = r % rw,  b = r / rw      (window offsets along rows / cols)
//! e = c % filt_rows, d = c / filt_rows
//! lifted[r, c] = patch[a + e, b + d]
//! ```
//!
//! so every block of `rw` lifted rows is the 1-D Hankel matrix of one
//! patch column (window `filt_rows`), and the blocks are laid out in a
//! Hankel pattern over patch columns (window `filt_cols`).

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use serde::{Deserialize, Serialize};

use crate::error::{AlohaError, Result};

/// A single-channel image patch, `patch[(row, col)]`.
pub type Patch = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HankelShape {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub filt_rows: usize,
    pub filt_cols: usize,
}

impl HankelShape {
    pub fn new(
        patch_rows: usize,
        patch_cols: usize,
        filt_rows: usize,
        filt_cols: usize,
    ) -> Result<Self> {
        let shape = Self {
            patch_rows,
            patch_cols,
            filt_rows,
            filt_cols,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// Square patch with a square filter.
    pub fn square(patch: usize, filt: usize) -> Result<Self> {
        Self::new(patch, patch, filt, filt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filt_rows == 0 || self.filt_rows > self.patch_rows {
            return Err(AlohaError::InvalidShape(format!(
                "filter rows {} must lie in 1..={}",
                self.filt_rows, self.patch_rows
            )));
        }
        if self.filt_cols == 0 || self.filt_cols > self.patch_cols {
            return Err(AlohaError::InvalidShape(format!(
                "filter cols {} must lie in 1..={}",
                self.filt_cols, self.patch_cols
            )));
        }
        Ok(())
    }

    /// Window positions along the patch rows.
    pub fn row_windows(&self) -> usize {
        self.patch_rows - self.filt_rows + 1
    }

    /// Window positions along the patch columns.
    pub fn col_windows(&self) -> usize {
        self.patch_cols - self.filt_cols + 1
    }

    pub fn lifted_rows(&self) -> usize {
        self.row_windows() * self.col_windows()
    }

    pub fn lifted_cols(&self) -> usize {
        self.filt_rows * self.filt_cols
    }

    pub fn patch_dims(&self) -> (usize, usize) {
        (self.patch_rows, self.patch_cols)
    }

    /// Patch pixel feeding lifted entry `(r, c)`.
    pub fn source_pixel(&self, r: usize, c: usize) -> (usize, usize) {
        let rw = self.row_windows();
        (r % rw + c % self.filt_rows, r / rw + c / self.filt_rows)
    }

    fn check_patch(&self, patch: &Patch) -> Result<()> {
        if patch.shape() != self.patch_dims() {
            return Err(AlohaError::InvalidShape(format!(
                "patch is {}x{}, shape expects {}x{}",
                patch.nrows(),
                patch.ncols(),
                self.patch_rows,
                self.patch_cols
            )));
        }
        Ok(())
    }

    fn check_lifted(&self, data: &DMatrix<f64>) -> Result<()> {
        if data.shape() != (self.lifted_rows(), self.lifted_cols()) {
            return Err(AlohaError::InvalidShape(format!(
                "lifted matrix is {}x{}, shape expects {}x{}",
                data.nrows(),
                data.ncols(),
                self.lifted_rows(),
                self.lifted_cols()
            )));
        }
        Ok(())
    }
}

/// Dense lifted matrix together with the geometry that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix {
    data: DMatrix<f64>,
    shape: HankelShape,
}

impl LiftedMatrix {
    /// Wraps an arbitrary matrix of lifted dimensions. The result need not
    /// be Hankel-consistent (e.g. a low-rank estimate `U Vᵀ`).
    pub fn new(data: DMatrix<f64>, shape: HankelShape) -> Result<Self> {
        shape.validate()?;
        shape.check_lifted(&data)?;
        Ok(Self { data, shape })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn shape(&self) -> &HankelShape {
        &self.shape
    }
}

/// Writes the lifting of `patch` into `out`, which must already have
/// lifted dimensions. Shapes are not re-checked.
pub(crate) fn lift_into(patch: &Patch, shape: &HankelShape, mut out: DMatrixViewMut<'_, f64>) {
    let rw = shape.row_windows();
    let cw = shape.col_windows();
    for d in 0..shape.filt_cols {
        for e in 0..shape.filt_rows {
            let c = d * shape.filt_rows + e;
            for b in 0..cw {
                for a in 0..rw {
                    out[(b * rw + a, c)] = patch[(a + e, b + d)];
                }
            }
        }
    }
}

/// Sums the entries of a lifted-shaped matrix back into patch coordinates.
pub(crate) fn adjoint_of(data: DMatrixView<'_, f64>, shape: &HankelShape) -> Patch {
    let rw = shape.row_windows();
    let cw = shape.col_windows();
    let mut out = Patch::zeros(shape.patch_rows, shape.patch_cols);
    for d in 0..shape.filt_cols {
        for e in 0..shape.filt_rows {
            let c = d * shape.filt_rows + e;
            for b in 0..cw {
                for a in 0..rw {
                    out[(a + e, b + d)] += data[(b * rw + a, c)];
                }
            }
        }
    }
    out
}

/// Lifts a patch to its block-Hankel matrix.
pub fn lift(patch: &Patch, shape: &HankelShape) -> Result<LiftedMatrix> {
    shape.validate()?;
    shape.check_patch(patch)?;
    let mut data = DMatrix::zeros(shape.lifted_rows(), shape.lifted_cols());
    lift_into(patch, shape, data.as_view_mut());
    Ok(LiftedMatrix {
        data,
        shape: *shape,
    })
}

/// Adjoint of [`lift`]: each pixel receives the sum of every lifted entry
/// that maps to it.
pub fn adjoint(lifted: &LiftedMatrix) -> Result<Patch> {
    lifted.shape.check_lifted(&lifted.data)?;
    Ok(adjoint_of(lifted.data.as_view(), &lifted.shape))
}

/// Number of window placements along an axis of length `len` that cover
/// `index` when the window has size `window`.
pub fn axis_weight(len: usize, window: usize, index: usize) -> usize {
    (index + 1)
        .min(window)
        .min(len - window + 1)
        .min(len - index)
}

/// How many lifted entries each pixel is copied to; the diagonal of the
/// lifting's normal operator.
pub fn multiplicity(shape: &HankelShape) -> Result<Patch> {
    shape.validate()?;
    Ok(Patch::from_fn(shape.patch_rows, shape.patch_cols, |i, j| {
        (axis_weight(shape.patch_rows, shape.filt_rows, i)
            * axis_weight(shape.patch_cols, shape.filt_cols, j)) as f64
    }))
}

pub(crate) fn pseudo_inverse_of(
    data: DMatrixView<'_, f64>,
    shape: &HankelShape,
    weights: &Patch,
) -> Patch {
    let mut out = adjoint_of(data, shape);
    out.component_div_assign(weights);
    out
}

/// Left inverse of [`lift`]: averages all lifted entries of each pixel.
pub fn pseudo_inverse(lifted: &LiftedMatrix) -> Result<Patch> {
    let weights = multiplicity(&lifted.shape)?;
    lifted.shape.check_lifted(&lifted.data)?;
    Ok(pseudo_inverse_of(lifted.data.as_view(), &lifted.shape, &weights))
}

/// Lifted channels placed side by side, `[H{X₁} | H{X₂} | … | H{X_C}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelLifted {
    data: DMatrix<f64>,
    shape: HankelShape,
    channels: usize,
}

impl MultiChannelLifted {
    /// Wraps an already concatenated matrix.
    pub fn new(data: DMatrix<f64>, shape: HankelShape, channels: usize) -> Result<Self> {
        shape.validate()?;
        if channels == 0 {
            return Err(AlohaError::EmptyInput("zero channels".into()));
        }
        if data.shape() != (shape.lifted_rows(), channels * shape.lifted_cols()) {
            return Err(AlohaError::InvalidShape(format!(
                "concatenated matrix is {}x{}, expected {}x{}",
                data.nrows(),
                data.ncols(),
                shape.lifted_rows(),
                channels * shape.lifted_cols()
            )));
        }
        Ok(Self {
            data,
            shape,
            channels,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn shape(&self) -> &HankelShape {
        &self.shape
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    /// Copy of one channel block.
    pub fn block(&self, channel: usize) -> LiftedMatrix {
        let w = self.shape.lifted_cols();
        LiftedMatrix {
            data: self.data.columns(channel * w, w).into_owned(),
            shape: self.shape,
        }
    }
}

pub fn concat_channels(lifted: &[LiftedMatrix]) -> Result<MultiChannelLifted> {
    let first = lifted
        .first()
        .ok_or_else(|| AlohaError::EmptyInput("no channels to concatenate".into()))?;
    let shape = first.shape;
    if let Some(bad) = lifted.iter().position(|l| l.shape != shape) {
        return Err(AlohaError::InvalidShape(format!(
            "channel {bad} has shape {:?}, channel 0 has {:?}",
            lifted[bad].shape, shape
        )));
    }
    let w = shape.lifted_cols();
    let mut data = DMatrix::zeros(shape.lifted_rows(), w * lifted.len());
    for (c, block) in lifted.iter().enumerate() {
        data.columns_mut(c * w, w).copy_from(&block.data);
    }
    Ok(MultiChannelLifted {
        data,
        shape,
        channels: lifted.len(),
    })
}

pub fn split_channels(multi: &MultiChannelLifted) -> Vec<LiftedMatrix> {
    (0..multi.channels).map(|c| multi.block(c)).collect()
}
