//! Deterministic synthetic corpora for desk-scale testing.
//!
//! * [`SynthKind::Identity`]: every subject owns a smooth random base
//!   pattern; each image perturbs it with a sub-pixel shift, an affine
//!   illumination change with a linear gradient, and pixel noise.
//! * [`SynthKind::Texture`]: subjects come in pairs sharing a random oriented
//!   stamp shape scattered at random positions; the two members of a pair
//!   differ only in stamp polarity (bright on gray vs. dark on gray), so the
//!   pair has identical second-order patch statistics.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{keyed_rng, write_pgm, GrayImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Identity,
    Texture,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub subjects: usize,
    pub per_subject: usize,
    pub side: usize,
    pub seed: u64,
}

pub fn subject_name(s: usize) -> String {
    format!("subject_{s:03}")
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<GrayImage>> {
    if spec.subjects == 0 || spec.per_subject == 0 || spec.side < 2 {
        return Err(Error::InvalidArgument("synthetic corpus needs subjects, images and side >= 2".into()));
    }
    let mut out = Vec::with_capacity(spec.subjects * spec.per_subject);
    for s in 0..spec.subjects {
        let subject = subject_name(s);
        let base = match spec.kind {
            SynthKind::Identity => Pattern::Blobs(BlobField::random(
                &mut keyed_rng(spec.seed, 0, subject.as_bytes()),
                spec.side,
            )),
            SynthKind::Texture => {
                let pair = subject_name(s / 2);
                let stamp = Stamp::random(&mut keyed_rng(spec.seed, 0, pair.as_bytes()), spec.side);
                Pattern::Texture { stamp, polarity: if s % 2 == 0 { 1.0 } else { -1.0 } }
            }
        };
        for i in 0..spec.per_subject {
            let name = format!("img_{i:02}.pgm");
            let mut rng = keyed_rng(spec.seed, 1, format!("{subject}/{name}").as_bytes());
            let pixels = base.render(&mut rng, spec.side);
            out.push(GrayImage::new(spec.side, spec.side, pixels, subject.clone(), format!("{subject}/{name}"))?);
        }
    }
    Ok(out)
}

/// Writes images as `dir/<subject>/<file>.pgm`, using each image's
/// `source_path` as the relative location.
pub fn write_corpus(dir: &Path, images: &[GrayImage]) -> Result<()> {
    for img in images {
        let path = dir.join(&img.source_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_pgm(&path, img)?;
    }
    Ok(())
}

enum Pattern {
    Blobs(BlobField),
    Texture { stamp: Stamp, polarity: f64 },
}

impl Pattern {
    fn render(&self, rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
        match self {
            Pattern::Blobs(field) => {
                let (dy, dx) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                let gain = rng.random_range(0.7..1.1);
                let offset = rng.random_range(-0.1..0.1);
                let (gy, gx) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                let scale = 1.0 / (side - 1) as f64;
                let mut px = Vec::with_capacity(side * side);
                for y in 0..side {
                    for x in 0..side {
                        let v = field.normalized(y as f64 - dy, x as f64 - dx);
                        let light = gain * v + offset + gy * (y as f64 * scale - 0.5) + gx * (x as f64 * scale - 0.5);
                        px.push(light + 0.02 * normal(rng));
                    }
                }
                clamp_unit(px)
            }
            Pattern::Texture { stamp, polarity } => {
                let mut px = vec![0.0; side * side];
                let count = (side * side) / 48;
                for _ in 0..count {
                    let cy = rng.random_range(0.0..side as f64);
                    let cx = rng.random_range(0.0..side as f64);
                    let amp = polarity * rng.random_range(0.25..0.35);
                    stamp.splat(&mut px, side, cy, cx, amp);
                }
                let px = px.into_iter().map(|v| 0.5 + v + 0.02 * normal(rng)).collect();
                clamp_unit(px)
            }
        }
    }
}

fn clamp_unit(px: Vec<f64>) -> Vec<f64> {
    px.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct BlobField {
    blobs: Vec<(f64, f64, f64, f64)>,
    lo: f64,
    hi: f64,
}

impl BlobField {
    fn random(rng: &mut ChaCha8Rng, side: usize) -> Self {
        let s = side as f64;
        let blobs = (0..24)
            .map(|_| {
                (
                    rng.random_range(0.0..s),
                    rng.random_range(0.0..s),
                    rng.random_range(s / 16.0..s / 5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let mut field = BlobField { blobs, lo: 0.0, hi: 1.0 };
        let values: Vec<f64> = (0..side * side).map(|k| field.raw((k / side) as f64, (k % side) as f64)).collect();
        field.lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        field.hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        field
    }

    fn raw(&self, y: f64, x: f64) -> f64 {
        self.blobs
            .iter()
            .map(|&(cy, cx, sigma, amp)| amp * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp())
            .sum()
    }

    /// Base pattern rescaled into `[0.2, 0.8]`.
    fn normalized(&self, y: f64, x: f64) -> f64 {
        0.2 + 0.6 * (self.raw(y, x) - self.lo) / (self.hi - self.lo).max(1e-12)
    }
}

/// Anisotropic Gaussian bar.
struct Stamp {
    sigma_long: f64,
    sigma_short: f64,
    cos: f64,
    sin: f64,
}

impl Stamp {
    fn random(rng: &mut ChaCha8Rng, side: usize) -> Self {
        let unit = side as f64 / 64.0;
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        Stamp {
            sigma_long: unit * rng.random_range(1.0..3.0),
            sigma_short: unit * rng.random_range(0.5..1.0),
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    fn splat(&self, px: &mut [f64], side: usize, cy: f64, cx: f64, amp: f64) {
        let reach = (3.0 * self.sigma_long).ceil() as isize;
        let (y0, x0) = (cy.floor() as isize, cx.floor() as isize);
        for y in (y0 - reach).max(0)..=(y0 + reach).min(side as isize - 1) {
            for x in (x0 - reach).max(0)..=(x0 + reach).min(side as isize - 1) {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let along = dx * self.cos + dy * self.sin;
                let across = -dx * self.sin + dy * self.cos;
                let w = (-(along * along) / (2.0 * self.sigma_long.powi(2))
                    - (across * across) / (2.0 * self.sigma_short.powi(2)))
                .exp();
                px[y as usize * side + x as usize] += amp * w;
            }
        }
    }
}
