//! Split soft-threshold encoding against a dictionary.

use ndarray::{Array2, ArrayView2, Axis};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.25;

/// Per-patch codes, row-aligned with the originating [`crate::PatchSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures {
    pub codes: Array2<f64>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// `None` for the passthrough (no encoding) mode.
    pub alpha: Option<f64>,
}

impl EncodedFeatures {
    pub fn width(&self) -> usize {
        self.codes.ncols()
    }

    pub fn grid_coord(&self, index: usize) -> (usize, usize) {
        (index / self.grid_cols, index % self.grid_cols)
    }
}

/// `code[j] = max(0, ⟨dⱼ, x⟩ − α)`, `code[j + K] = max(0, −⟨dⱼ, x⟩ − α)`.
pub fn encode(
    patches: ArrayView2<'_, f64>,
    grid: (usize, usize),
    dict: &Dictionary,
    alpha: f64,
) -> Result<EncodedFeatures> {
    if patches.ncols() != dict.dim() {
        return Err(Error::DimensionMismatch { expected: dict.dim(), got: patches.ncols() });
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    check_grid(patches.nrows(), grid)?;
    let k = dict.len();
    let responses = patches.dot(&dict.atoms.t());
    let mut codes = Array2::zeros((patches.nrows(), 2 * k));
    for (resp, mut code) in responses.axis_iter(Axis(0)).zip(codes.axis_iter_mut(Axis(0))) {
        for (j, &r) in resp.iter().enumerate() {
            code[j] = (r - alpha).max(0.0);
            code[j + k] = (-r - alpha).max(0.0);
        }
    }
    Ok(EncodedFeatures { codes, grid_rows: grid.0, grid_cols: grid.1, alpha: Some(alpha) })
}

/// Uses the (whitened) patches themselves as features.
pub fn passthrough(patches: ArrayView2<'_, f64>, grid: (usize, usize)) -> Result<EncodedFeatures> {
    check_grid(patches.nrows(), grid)?;
    Ok(EncodedFeatures { codes: patches.to_owned(), grid_rows: grid.0, grid_cols: grid.1, alpha: None })
}

fn check_grid(rows: usize, grid: (usize, usize)) -> Result<()> {
    if rows != grid.0 * grid.1 {
        return Err(Error::DimensionMismatch { expected: grid.0 * grid.1, got: rows });
    }
    Ok(())
}
