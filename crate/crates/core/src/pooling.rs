//! Second-order average pooling over a spatial pyramid, log-Euclidean
//! mapping and vectorization into the final image descriptor.
//!
//! Each pyramid cell yields `F = (Σ fᵢ fᵢᵀ)/|R| + ε I`, mapped to `log F`
//! through a symmetric eigendecomposition. The upper triangle of `log F`,
//! with off-diagonal entries scaled by √2, is appended to the descriptor so
//! that descriptor dot products equal Frobenius inner products of the log
//! matrices.

use nalgebra::DMatrix;
use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::encoding::EncodedFeatures;
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

pub const DEFAULT_GRIDS: [usize; 5] = [1, 2, 4, 6, 8];
/// Every pyramid used in the ablations is a prefix of this sequence.
pub const MAX_PYRAMID: [usize; 8] = [1, 2, 4, 6, 8, 10, 12, 15];
pub const DEFAULT_EPS_SPD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PyramidConfig {
    pub grids: Vec<usize>,
    pub eps_spd: f64,
    pub l2_normalize: bool,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig { grids: DEFAULT_GRIDS.to_vec(), eps_spd: DEFAULT_EPS_SPD, l2_normalize: true }
    }
}

impl PyramidConfig {
    /// The first `levels` grids of [`MAX_PYRAMID`].
    pub fn with_levels(levels: usize) -> Result<Self> {
        if levels == 0 || levels > MAX_PYRAMID.len() {
            return Err(Error::InvalidArgument(format!("pyramid depth must be in 1..=8, got {levels}")));
        }
        Ok(PyramidConfig { grids: MAX_PYRAMID[..levels].to_vec(), ..Default::default() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::InvalidArgument("pyramid needs at least one grid".into()));
        }
        if self.grids[0] == 0 || self.grids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "pyramid grids must be positive and strictly increasing, got {:?}",
                self.grids
            )));
        }
        if !(self.eps_spd.is_finite() && self.eps_spd >= 0.0) {
            return Err(Error::InvalidArgument(format!("eps_spd must be finite and >= 0, got {}", self.eps_spd)));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.grids.iter().map(|g| g * g).sum()
    }
}

/// Length of a descriptor for code width `p`: cells · p(p+1)/2.
pub fn descriptor_len(p: usize, grids: &[usize]) -> usize {
    grids.iter().map(|g| g * g).sum::<usize>() * p * (p + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledDescriptor {
    pub values: Vec<f64>,
    /// Code width `p` of the pooled matrices.
    pub width: usize,
    pub cells: usize,
    pub l2_normalized: bool,
}

/// Running packed upper-triangle sum of outer products.
#[derive(Debug, Clone)]
struct OuterSum {
    p: usize,
    packed: Vec<f64>,
    count: usize,
}

impl OuterSum {
    fn new(p: usize) -> Self {
        OuterSum { p, packed: vec![0.0; p * (p + 1) / 2], count: 0 }
    }

    fn add(&mut self, f: &[f64]) {
        let p = self.p;
        let mut idx = 0;
        for i in 0..p {
            let fi = f[i];
            let len = p - i;
            if fi != 0.0 {
                for (acc, fj) in self.packed[idx..idx + len].iter_mut().zip(&f[i..]) {
                    *acc += fi * fj;
                }
            }
            idx += len;
        }
        self.count += 1;
    }

    fn finish(&self, eps_spd: f64) -> DMatrix<f64> {
        let p = self.p;
        let inv = if self.count > 0 { 1.0 / self.count as f64 } else { 0.0 };
        let mut m = DMatrix::zeros(p, p);
        let mut idx = 0;
        for i in 0..p {
            for j in i..p {
                let v = self.packed[idx] * inv;
                m[(i, j)] = v;
                m[(j, i)] = v;
                idx += 1;
            }
            m[(i, i)] += eps_spd;
        }
        m
    }
}

/// Average outer product of the rows of `codes` plus `eps_spd·I`.
/// An empty region gives `eps_spd·I`.
pub fn pool_cell(codes: ArrayView2<'_, f64>, eps_spd: f64) -> DMatrix<f64> {
    let mut acc = OuterSum::new(codes.ncols());
    for row in codes.rows() {
        match row.as_slice() {
            Some(s) => acc.add(s),
            None => acc.add(&row.to_vec()),
        }
    }
    acc.finish(eps_spd)
}

/// Principal matrix logarithm of a symmetric positive definite matrix.
pub fn log_spd(f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    log_spd_named(f, "matrix")
}

fn log_spd_named(f: &DMatrix<f64>, cell: &str) -> Result<DMatrix<f64>> {
    let fail = |reason: String| Error::NotSpd { cell: cell.to_string(), reason };
    if !f.is_square() {
        return Err(fail(format!("not square ({}x{})", f.nrows(), f.ncols())));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(fail("non-finite entry".into()));
    }
    let asym = (f - f.transpose()).abs().max();
    if asym > 1e-8 {
        return Err(fail(format!("asymmetry {asym:e}")));
    }
    let eig = sym_eigen(f);
    if let Some(&min) = eig.values.first() {
        if min.is_nan() || min <= 0.0 {
            return Err(fail(format!("eigenvalue {min:e} is not positive")));
        }
    }
    Ok(eig.map(f64::ln))
}

/// Appends the √2-scaled upper triangle of a symmetric matrix.
pub fn vectorize_sym(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    let p = m.nrows();
    for i in 0..p {
        out.push(m[(i, i)]);
        for j in (i + 1)..p {
            out.push(std::f64::consts::SQRT_2 * m[(i, j)]);
        }
    }
}

/// Pools, log-maps and concatenates every pyramid cell.
///
/// The feature at grid position `(i, j)` falls in cell
/// `(min(⌊i·g/rows⌋, g−1), min(⌊j·g/cols⌋, g−1))` of grid `g`; cells are
/// emitted grid by grid, row-major within a grid.
pub fn pool_pyramid(feats: &EncodedFeatures, cfg: &PyramidConfig) -> Result<PooledDescriptor> {
    cfg.validate()?;
    let n = feats.codes.nrows();
    if n == 0 {
        return Err(Error::Empty("feature set"));
    }
    let p = feats.width();
    let (rows, cols) = (feats.grid_rows, feats.grid_cols);
    let codes = feats.codes.as_standard_layout();
    let data = codes.as_slice().expect("standard layout");

    let mut cells: Vec<(usize, usize, usize, OuterSum)> = Vec::with_capacity(cfg.cell_count());
    for &g in &cfg.grids {
        let base = cells.len();
        for ci in 0..g {
            for cj in 0..g {
                cells.push((g, ci, cj, OuterSum::new(p)));
            }
        }
        for k in 0..n {
            let (i, j) = (k / cols, k % cols);
            let ci = cell_index(i, g, rows);
            let cj = cell_index(j, g, cols);
            cells[base + ci * g + cj].3.add(&data[k * p..(k + 1) * p]);
        }
    }

    let logs: Vec<Result<DMatrix<f64>>> = cells
        .par_iter()
        .map(|(g, ci, cj, acc)| {
            let f = acc.finish(cfg.eps_spd);
            log_spd(&f).map_err(|e| match e {
                Error::NotSpd { reason, .. } => Error::NotSpd { cell: format!("grid {g} cell ({ci}, {cj})"), reason },
                other => other,
            })
        })
        .collect();

    let mut values = Vec::with_capacity(descriptor_len(p, &cfg.grids));
    for log in logs {
        vectorize_sym(&log?, &mut values);
    }
    if cfg.l2_normalize {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(PooledDescriptor { values, width: p, cells: cells.len(), l2_normalized: cfg.l2_normalize })
}

#[inline]
pub(crate) fn cell_index(pos: usize, g: usize, len: usize) -> usize {
    (pos * g / len).min(g - 1)
}

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"SOPD";
pub const DESCRIPTOR_VERSION: u32 = 1;

/// Flat little-endian layout: `SOPD`, version, p, cell count (all u32),
/// then the values as f32.
pub fn encode_descriptor(d: &PooledDescriptor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * d.values.len());
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    out.extend_from_slice(&DESCRIPTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    out.extend_from_slice(&(d.cells as u32).to_le_bytes());
    for v in &d.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Inverse of [`encode_descriptor`]; values come back at f32 precision.
pub fn decode_descriptor(bytes: &[u8]) -> Result<PooledDescriptor> {
    let bad = |reason: &str| Error::Format { what: "descriptor", reason: reason.to_string() };
    if bytes.len() < 16 || &bytes[..4] != DESCRIPTOR_MAGIC {
        return Err(bad("missing SOPD header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    if word(4) != DESCRIPTOR_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (p, cells) = (word(8), word(12));
    let len = cells * p * (p + 1) / 2;
    if bytes.len() != 16 + 4 * len {
        return Err(bad("payload length does not match header"));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(PooledDescriptor { values, width: p, cells, l2_normalized: false })
}
