//! Fitted pipeline state and its `SOPM` binary file format.
//!
//! Layout (little-endian): magic `SOPM`, version `u32`, then five sections,
//! each a `u64` byte length followed by its payload:
//!
//! 1. config: UTF-8 `key=value` lines
//! 2. whitening: `u64` dim, `dim` mean values, `dim²` matrix values (row-major)
//! 3. atoms: `u64` rows, `u64` cols, values (zero rows in passthrough mode)
//! 4. ridge weights: `u64` rows, `u64` cols, values
//! 5. classes: `u64` count, then per class a `u64` byte length and UTF-8 bytes
//!
//! All reals are `f64`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use super::config::{EncodingMode, PipelineConfig};
use crate::classifier::RidgeModel;
use crate::dataset::GrayImage;
use crate::dictionary::Dictionary;
use crate::encoding::{encode, passthrough};
use crate::error::{Error, Result, Stage, StageExt};
use crate::patches::extract_patches;
use crate::pooling::{pool_pyramid, PooledDescriptor};
use crate::whitening::{apply_zca, ZcaTransform};

pub const MODEL_MAGIC: &[u8; 4] = b"SOPM";
pub const MODEL_VERSION: u32 = 1;

/// Everything needed to turn an image into a descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub config: PipelineConfig,
    pub zca: ZcaTransform,
    /// `None` in passthrough mode.
    pub dictionary: Option<Dictionary>,
}

impl FeatureExtractor {
    pub fn describe(&self, image: &GrayImage) -> Result<PooledDescriptor> {
        let cfg = &self.config;
        let image = if image.rows() != cfg.target_side || image.cols() != cfg.target_side {
            std::borrow::Cow::Owned(image.resized(cfg.target_side, cfg.target_side))
        } else {
            std::borrow::Cow::Borrowed(image)
        };
        let mut patches = extract_patches(&image, cfg.patch_side, cfg.stride).stage(Stage::Patches)?;
        patches.normalize();
        let grid = (patches.grid_rows, patches.grid_cols);
        let white = apply_zca(&self.zca, patches.vectors.view()).stage(Stage::Whitening)?;
        let feats = match (&self.dictionary, cfg.encoding_mode) {
            (Some(dict), EncodingMode::Encode) => encode(white.view(), grid, dict, cfg.alpha),
            (None, EncodingMode::Passthrough) => passthrough(white.view(), grid),
            _ => Err(Error::InvalidArgument("dictionary presence does not match encoding mode".into())),
        }
        .stage(Stage::Encoding)?;
        pool_pyramid(&feats, &cfg.pyramid()).stage(Stage::Pooling)
    }

    /// Descriptors of all images as rows, computed in parallel.
    pub fn describe_all(&self, images: &[GrayImage]) -> Result<Array2<f64>> {
        let rows: Vec<PooledDescriptor> = images.par_iter().map(|img| self.describe(img)).collect::<Result<_>>()?;
        let dim = rows.first().map_or(0, |d| d.values.len());
        let mut out = Array2::zeros((rows.len(), dim));
        for (mut dst, d) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&ArrayView1::from(&d.values));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub extractor: FeatureExtractor,
    pub ridge: RidgeModel,
}

impl Model {
    pub fn config(&self) -> &PipelineConfig {
        &self.extractor.config
    }

    pub fn predict(&self, image: &GrayImage) -> Result<&str> {
        let d = self.extractor.describe(image)?;
        let idx = self.ridge.predict_index(ArrayView1::from(&d.values)).stage(Stage::Classifier)?;
        Ok(&self.ridge.classes[idx])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());

        section(&mut out, self.config().to_kv().into_bytes());

        let zca = &self.extractor.zca;
        let mut buf = Vec::new();
        put_u64(&mut buf, zca.dim() as u64);
        put_reals(&mut buf, zca.mean.iter());
        put_reals(&mut buf, zca.matrix.iter());
        section(&mut out, buf);

        let empty = Array2::zeros((0, 0));
        let atoms = self.extractor.dictionary.as_ref().map_or(&empty, |d| &d.atoms);
        section(&mut out, matrix_bytes(atoms));
        section(&mut out, matrix_bytes(&self.ridge.weights));

        let mut buf = Vec::new();
        put_u64(&mut buf, self.ridge.classes.len() as u64);
        for c in &self.ridge.classes {
            put_u64(&mut buf, c.len() as u64);
            buf.extend_from_slice(c.as_bytes());
        }
        section(&mut out, buf);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(format_err("missing SOPM magic"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(format_err(&format!("unsupported model version {version}")));
        }

        let text = std::str::from_utf8(r.section()?).map_err(|_| format_err("config is not UTF-8"))?;
        let config = PipelineConfig::from_kv(text)?;

        let mut z = Reader { bytes: r.section()?, pos: 0 };
        let dim = z.len()?;
        let mean = Array1::from(z.reals(dim)?);
        let matrix = Array2::from_shape_vec((dim, dim), z.reals(dim * dim)?).expect("shape");
        z.finish()?;
        let zca = ZcaTransform { mean, matrix, eps_zca: config.eps_zca };

        let atoms = Reader { bytes: r.section()?, pos: 0 }.matrix()?;
        let dictionary = (atoms.nrows() > 0).then_some(Dictionary { atoms });
        let weights = Reader { bytes: r.section()?, pos: 0 }.matrix()?;

        let mut c = Reader { bytes: r.section()?, pos: 0 };
        let count = c.len()?;
        let mut classes = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = c.len()?;
            let s = std::str::from_utf8(c.take(len)?).map_err(|_| format_err("class name is not UTF-8"))?;
            classes.push(s.to_string());
        }
        c.finish()?;
        r.finish()?;

        if weights.ncols() != classes.len() {
            return Err(format_err("weight columns do not match class count"));
        }
        let lambda = config.lambda;
        Ok(Model {
            extractor: FeatureExtractor { config, zca, dictionary },
            ridge: RidgeModel { weights, classes, lambda },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e)).stage(Stage::ModelIo)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e)).stage(Stage::ModelIo)?;
        Model::from_bytes(&bytes).stage(Stage::ModelIo)
    }
}

fn format_err(reason: &str) -> Error {
    Error::Format { what: "model file", reason: reason.to_string() }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_reals<'a>(out: &mut Vec<u8>, values: impl Iterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn section(out: &mut Vec<u8>, payload: Vec<u8>) {
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(&payload);
}

fn matrix_bytes(m: &Array2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * m.len());
    put_u64(&mut buf, m.nrows() as u64);
    put_u64(&mut buf, m.ncols() as u64);
    put_reals(&mut buf, m.iter());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| format_err("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| format_err("length overflows usize"))
    }

    fn section(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| format_err("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let (rows, cols) = (self.len()?, self.len()?);
        let n = rows.checked_mul(cols).ok_or_else(|| format_err("matrix size overflow"))?;
        let m = Array2::from_shape_vec((rows, cols), self.reals(n)?).expect("shape");
        self.finish()?;
        Ok(m)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_err("trailing bytes"));
        }
        Ok(())
    }
}
