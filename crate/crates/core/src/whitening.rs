//! ZCA whitening of contrast-normalized patches.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, to_nalgebra, to_ndarray};

pub const DEFAULT_EPS_ZCA: f64 = 0.1;

/// `x ↦ (x − mean)·matrix` with `matrix = E (Λ + ε I)^(−1/2) Eᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform {
    pub mean: Array1<f64>,
    pub matrix: Array2<f64>,
    pub eps_zca: f64,
}

impl ZcaTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        ZcaTransform { mean: Array1::zeros(dim), matrix: Array2::eye(dim), eps_zca: 0.0 }
    }
}

/// Fits the whitening transform on an `n × dim` sample, `n ≥ dim`.
pub fn fit_zca(patches: ArrayView2<'_, f64>, eps_zca: f64) -> Result<ZcaTransform> {
    let (n, dim) = patches.dim();
    if dim == 0 {
        return Err(Error::InvalidArgument("patch dimension is zero".into()));
    }
    if !(eps_zca.is_finite() && eps_zca >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps_zca must be finite and >= 0, got {eps_zca}")));
    }
    if n < dim {
        return Err(Error::TooFewPatches { needed: dim, got: n, dim });
    }
    let mean = patches.mean_axis(Axis(0)).expect("n > 0");
    let centered = &patches - &mean;
    let cov = centered.t().dot(&centered) / n as f64;

    let eig = sym_eigen(&to_nalgebra(&cov));
    // eigenvalues below this are roundoff around an exact zero
    let floor = 1e-12 * eig.values.last().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&bad) = eig.values.iter().find(|&&v| (v + eps_zca).is_nan() || v + eps_zca <= floor) {
        return Err(Error::SingularCovariance(bad));
    }
    let matrix = to_ndarray(&eig.map(|v| 1.0 / (v + eps_zca).sqrt()));
    Ok(ZcaTransform { mean, matrix, eps_zca })
}

pub fn apply_zca(t: &ZcaTransform, patches: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if patches.ncols() != t.dim() {
        return Err(Error::DimensionMismatch { expected: t.dim(), got: patches.ncols() });
    }
    Ok((&patches - &t.mean).dot(&t.matrix))
}
