use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{AlohaError, Result};
use crate::hankel::{self, HankelShape, Patch};

/// The linear map from a patch to the matrix that is factorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifting {
    Hankel(HankelShape),
    /// Identity: the patch itself is the matrix.
    Raw { rows: usize, cols: usize },
}

impl Lifting {
    pub fn patch_dims(&self) -> (usize, usize) {
        match self {
            Lifting::Hankel(s) => s.patch_dims(),
            Lifting::Raw { rows, cols } => (*rows, *cols),
        }
    }

    pub fn lifted_dims(&self) -> (usize, usize) {
        match self {
            Lifting::Hankel(s) => (s.lifted_rows(), s.lifted_cols()),
            Lifting::Raw { rows, cols } => (*rows, *cols),
        }
    }

    pub(crate) fn check_patch(&self, patch: &Patch) -> Result<()> {
        if patch.shape() != self.patch_dims() {
            let (r, c) = self.patch_dims();
            return Err(AlohaError::InvalidShape(format!(
                "patch is {}x{}, solver expects {r}x{c}",
                patch.nrows(),
                patch.ncols()
            )));
        }
        Ok(())
    }

    /// Diagonal of the normal operator (all ones for the raw map).
    pub fn weights(&self) -> Patch {
        match self {
            Lifting::Hankel(s) => hankel::multiplicity(s).expect("validated shape"),
            Lifting::Raw { rows, cols } => Patch::from_element(*rows, *cols, 1.0),
        }
    }

    pub(crate) fn lift_into(&self, patch: &Patch, out: DMatrixViewMut<'_, f64>) {
        match self {
            Lifting::Hankel(s) => hankel::lift_into(patch, s, out),
            Lifting::Raw { .. } => {
                let mut out = out;
                out.copy_from(patch)
            }
        }
    }

    pub fn lift(&self, patch: &Patch) -> DMatrix<f64> {
        let (r, c) = self.lifted_dims();
        let mut out = DMatrix::zeros(r, c);
        self.lift_into(patch, out.as_view_mut());
        out
    }

    pub(crate) fn adjoint(&self, block: DMatrixView<'_, f64>) -> Patch {
        match self {
            Lifting::Hankel(s) => hankel::adjoint_of(block, s),
            Lifting::Raw { .. } => block.into_owned(),
        }
    }

    pub(crate) fn pseudo_inverse(&self, block: DMatrixView<'_, f64>, weights: &Patch) -> Patch {
        match self {
            Lifting::Hankel(s) => hankel::pseudo_inverse_of(block, s, weights),
            Lifting::Raw { .. } => block.into_owned(),
        }
    }

    /// Lifts every channel and concatenates them column-wise.
    pub fn lift_channels(&self, patches: &[Patch]) -> DMatrix<f64> {
        let (r, c) = self.lifted_dims();
        let mut out = DMatrix::zeros(r, c * patches.len());
        for (k, p) in patches.iter().enumerate() {
            self.lift_into(p, out.columns_mut(k * c, c));
        }
        out
    }
}
