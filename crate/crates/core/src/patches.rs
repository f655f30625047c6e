//! Dense overlapping patch extraction and per-patch contrast normalization.

use ndarray::Array2;

use crate::dataset::GrayImage;
use crate::error::{Error, Result};

/// Standard deviation at or below which a patch is treated as constant.
pub const STD_FLOOR: f64 = 1e-8;

/// Patches of one image, one row-major flattened `r×r` patch per row.
///
/// Rows are ordered row-major over the patch grid, so row `k` sits at grid
/// position `(k / grid_cols, k % grid_cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub vectors: Array2<f64>,
    pub patch_side: usize,
    pub stride: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn grid_coord(&self, index: usize) -> (usize, usize) {
        (index / self.grid_cols, index % self.grid_cols)
    }

    pub fn grid_coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).map(|k| self.grid_coord(k))
    }

    /// Applies [`normalize_patch`] to every row in place.
    pub fn normalize(&mut self) {
        for mut row in self.vectors.rows_mut() {
            let slice = row.as_slice_mut().expect("patch rows are contiguous");
            normalize_in_place(slice);
        }
    }
}

/// Number of patch positions along an axis of length `len`: `⌊(len − r)/s⌋ + 1`.
pub fn grid_len(len: usize, patch_side: usize, stride: usize) -> usize {
    (len - patch_side) / stride + 1
}

/// Gathers every `r×r` patch whose top-left corner lies on the stride-`s` grid.
pub fn extract_patches(image: &GrayImage, patch_side: usize, stride: usize) -> Result<PatchSet> {
    if patch_side == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch side and stride must be positive".into()));
    }
    let (rows, cols) = (image.rows(), image.cols());
    if patch_side > rows || patch_side > cols {
        return Err(Error::ImageTooSmall { rows, cols, patch: patch_side });
    }
    let grid_rows = grid_len(rows, patch_side, stride);
    let grid_cols = grid_len(cols, patch_side, stride);
    let dim = patch_side * patch_side;
    let px = image.pixels();
    let mut data = Vec::with_capacity(grid_rows * grid_cols * dim);
    for gi in 0..grid_rows {
        for gj in 0..grid_cols {
            let (top, left) = (gi * stride, gj * stride);
            for y in top..top + patch_side {
                data.extend_from_slice(&px[y * cols + left..y * cols + left + patch_side]);
            }
        }
    }
    let vectors = Array2::from_shape_vec((grid_rows * grid_cols, dim), data).expect("shape matches");
    Ok(PatchSet { vectors, patch_side, stride, grid_rows, grid_cols })
}

/// Brightness/contrast normalization `(x − mean) / std` with population std.
/// Near-constant patches map to the zero vector.
pub fn normalize_patch(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    normalize_in_place(&mut out);
    out
}

fn normalize_in_place(x: &mut [f64]) {
    assert!(!x.is_empty(), "cannot normalize an empty patch");
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > STD_FLOOR {
        x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    } else {
        x.iter_mut().for_each(|v| *v = 0.0);
    }
}
