//! Corpus ingestion, resizing and reproducible train/test splits.
//!
//! Corpora are laid out as `root/<subject>/<image>`. Images are decoded,
//! converted to grayscale with luma weights, resized with corner-anchored
//! bilinear interpolation and scaled to `[0, 1]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
    pub subject_id: String,
    pub source_path: String,
}

impl GrayImage {
    /// Builds an image from row-major pixels. Every pixel must be finite and in `[0, 1]`.
    pub fn new(
        rows: usize,
        cols: usize,
        pixels: Vec<f64>,
        subject_id: impl Into<String>,
        source_path: impl Into<String>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("image has zero size".into()));
        }
        if pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: pixels.len() });
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(GrayImage {
            rows,
            cols,
            pixels,
            subject_id: subject_id.into(),
            source_path: source_path.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols + col]
    }

    pub fn resized(&self, rows: usize, cols: usize) -> GrayImage {
        GrayImage {
            rows,
            cols,
            pixels: resize_bilinear(&self.pixels, self.rows, self.cols, rows, cols),
            subject_id: self.subject_id.clone(),
            source_path: self.source_path.clone(),
        }
    }
}

/// Corner-anchored bilinear resampling of a row-major plane.
///
/// Output pixel `(y, x)` samples the source at `(y·(h−1)/(H−1), x·(w−1)/(W−1))`,
/// so the four corners map exactly onto the source corners.
pub fn resize_bilinear(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    assert_eq!(src.len(), rows * cols);
    if rows == out_rows && cols == out_cols {
        return src.to_vec();
    }
    let ys: Vec<(usize, usize, f64)> = (0..out_rows).map(|y| sample_axis(y, rows, out_rows)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_cols).map(|x| sample_axis(x, cols, out_cols)).collect();
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            let top = src[y0 * cols + x0] * (1.0 - wx) + src[y0 * cols + x1] * wx;
            let bottom = src[y1 * cols + x0] * (1.0 - wx) + src[y1 * cols + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    out
}

fn sample_axis(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let pos = if dst > 1 {
        // integer product first so the last sample lands exactly on src - 1
        (i * (src - 1)) as f64 / (dst - 1) as f64
    } else {
        (src - 1) as f64 / 2.0
    };
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

#[derive(Debug, Clone)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub images: Vec<GrayImage>,
    pub failures: Vec<LoadFailure>,
}

/// Loads `root/<subject>/<image>` into square `target_side` grayscale images.
///
/// Unreadable files are collected in [`LoadedCorpus::failures`]; the load
/// only fails outright when no image at all could be read.
pub fn load_corpus(root: &Path, target_side: usize) -> Result<LoadedCorpus> {
    load_corpus_sized(root, target_side, target_side)
}

pub fn load_corpus_sized(root: &Path, rows: usize, cols: usize) -> Result<LoadedCorpus> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("target size must be positive".into()));
    }
    let mut files: Vec<(String, String, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let subject = entry.file_name().to_string_lossy().into_owned();
        if subject.starts_with('.') {
            continue;
        }
        for file in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let file = file.map_err(|e| Error::io(&dir, e))?;
            let name = file.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !file.path().is_file() {
                continue;
            }
            files.push((subject.clone(), name, file.path()));
        }
    }
    files.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

    let decoded: Vec<std::result::Result<GrayImage, LoadFailure>> = files
        .par_iter()
        .map(|(subject, _, path)| {
            read_gray(path)
                .map(|(r, c, px)| GrayImage {
                    rows: r,
                    cols: c,
                    pixels: px,
                    subject_id: subject.clone(),
                    source_path: path.to_string_lossy().into_owned(),
                })
                .map(|img| img.resized(rows, cols))
                .map_err(|e| LoadFailure { path: path.clone(), reason: e.to_string() })
        })
        .collect();

    let mut images = Vec::new();
    let mut failures = Vec::new();
    for d in decoded {
        match d {
            Ok(img) => images.push(img),
            Err(f) => failures.push(f),
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    Ok(LoadedCorpus { images, failures })
}

/// Decodes a PGM or PNG file into a `[0, 1]` grayscale plane.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let decode_err = |reason: String| Error::Decode { path: path.to_path_buf(), reason };
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let pixels = if img.color().has_color() {
        img.to_rgb8()
            .pixels()
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect()
    } else {
        img.to_luma8().pixels().map(|p| p[0] as f64 / 255.0).collect()
    };
    Ok((rows, cols, pixels))
}

/// Writes an image as binary 8-bit PGM.
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    bytes.extend(img.pixels.iter().map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_per_subject: usize,
    pub test_per_subject: usize,
    pub runs: usize,
    pub seed: u64,
}

/// One run's disjoint train/test index sets into the image list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub run: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub splits: Vec<Split>,
    /// Subjects dropped for having too few images, with their image counts.
    pub excluded: Vec<(String, usize)>,
}

/// Draws `spec.runs` random per-subject train/test splits.
///
/// Each (run, subject) draw uses its own ChaCha stream keyed on
/// `sha256(seed, run, subject_id)`, so splits do not depend on subject order
/// or on the platform.
pub fn make_splits(images: &[GrayImage], spec: &SplitSpec) -> Result<SplitPlan> {
    if spec.train_per_subject == 0 {
        return Err(Error::InvalidArgument("train_per_subject must be at least 1".into()));
    }
    if spec.runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    let needed = spec.train_per_subject + spec.test_per_subject;
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, img) in images.iter().enumerate() {
        by_subject.entry(img.subject_id.as_str()).or_default().push(i);
    }
    let mut excluded = Vec::new();
    let mut retained = Vec::new();
    for (subject, idx) in by_subject {
        if idx.len() < needed {
            excluded.push((subject.to_string(), idx.len()));
        } else {
            retained.push((subject, idx));
        }
    }
    if retained.is_empty() {
        return Err(Error::NoSatisfiableSubject { needed });
    }

    let splits = (0..spec.runs)
        .map(|run| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (subject, idx) in &retained {
                let mut rng = keyed_rng(spec.seed, run as u64, subject.as_bytes());
                let mut pool = idx.clone();
                partial_shuffle(&mut pool, needed, &mut rng);
                train.extend_from_slice(&pool[..spec.train_per_subject]);
                test.extend_from_slice(&pool[spec.train_per_subject..needed]);
            }
            Split { run, train, test }
        })
        .collect();
    Ok(SplitPlan { splits, excluded })
}

pub(crate) fn keyed_rng(seed: u64, stream: u64, key: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.to_le_bytes());
    h.update(key);
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Moves a uniform random `k`-subset (in random order) to the front.
pub(crate) fn partial_shuffle<T>(v: &mut [T], k: usize, rng: &mut ChaCha8Rng) {
    let n = v.len();
    for i in 0..k.min(n) {
        let j = i + rng.random_range(0..(n - i) as u64) as usize;
        v.swap(i, j);
    }
}

/// Plain-text split manifest: one `run,role,subject,path` line per image.
pub fn split_manifest(plan: &SplitPlan, images: &[GrayImage]) -> String {
    let mut out = String::new();
    for split in &plan.splits {
        for (role, set) in [("train", &split.train), ("test", &split.test)] {
            for &i in set.iter() {
                let img = &images[i];
                let _ = writeln!(out, "{},{},{},{}", split.run, role, img.subject_id, img.source_path);
            }
        }
    }
    out
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
