//! End-to-end training, evaluation and benchmark protocols.

mod config;
mod model;
mod report;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{EncodingMode, PipelineConfig};
pub use model::{FeatureExtractor, Model, MODEL_MAGIC, MODEL_VERSION};
pub use report::{
    ablate_encoding, ablate_grid, benchmark, BenchmarkReport, EncodingAblation, ExcludedSubject, GridAblation,
    RunReport, StageTime,
};

use crate::classifier::train_ridge;
use crate::dataset::{keyed_rng, partial_shuffle, GrayImage};
use crate::dictionary::{kmeans, Dictionary, KMeansOptions};
use crate::error::{Error, Result, Stage, StageExt};
use crate::patches::{extract_patches, grid_len};
use crate::whitening::{apply_zca, fit_zca};

/// Wall-clock laps between consecutive stage boundaries.
#[derive(Debug)]
pub struct StageTimer {
    pub(crate) last: Instant,
    pub laps: Vec<(String, f64)>,
}

impl StageTimer {
    pub fn start() -> Self {
        StageTimer { last: Instant::now(), laps: Vec::new() }
    }

    pub fn lap(&mut self, name: impl Into<String>) {
        let now = Instant::now();
        self.laps.push((name.into(), (now - self.last).as_secs_f64()));
        self.last = now;
    }
}

fn conform(img: &GrayImage, side: usize) -> Cow<'_, GrayImage> {
    if img.rows() == side && img.cols() == side {
        Cow::Borrowed(img)
    } else {
        Cow::Owned(img.resized(side, side))
    }
}

/// Trains whitening, dictionary and ridge classifier on `train`.
pub fn fit_pipeline(train: &[GrayImage], cfg: &PipelineConfig) -> Result<Model> {
    fit_pipeline_timed(train, cfg, &mut StageTimer::start())
}

pub fn fit_pipeline_timed(train: &[GrayImage], cfg: &PipelineConfig, timer: &mut StageTimer) -> Result<Model> {
    let subjects: BTreeSet<&str> = train.iter().map(|i| i.subject_id.as_str()).collect();
    if subjects.len() < 2 {
        return Err(Error::InvalidArgument(format!("training needs at least 2 subjects, got {}", subjects.len())))
            .stage(Stage::Config);
    }
    let extractor = fit_extractor(train, cfg, timer)?;
    enroll_timed(extractor, train, timer)
}

/// Fits the unsupervised stages: patch sampling, whitening and (in encode mode) the dictionary.
pub fn fit_extractor(train: &[GrayImage], cfg: &PipelineConfig, timer: &mut StageTimer) -> Result<FeatureExtractor> {
    cfg.validate().stage(Stage::Config)?;
    if train.is_empty() {
        return Err(Error::Empty("training set")).stage(Stage::Config);
    }
    let sample = sample_patches(train, cfg).stage(Stage::Patches)?;
    timer.lap("patches");

    let zca = fit_zca(sample.view(), cfg.eps_zca).stage(Stage::Whitening)?;
    let white = apply_zca(&zca, sample.view()).stage(Stage::Whitening)?;
    drop(sample);
    timer.lap("whitening");

    let dictionary = match cfg.encoding_mode {
        EncodingMode::Encode => {
            let opts = KMeansOptions { k: cfg.atoms, max_iters: cfg.kmeans_iters, seed: cfg.seed };
            let fit = kmeans(white.view(), &opts).stage(Stage::Dictionary)?;
            Some(Dictionary::from_centroids(fit.centroids, cfg.normalize_atoms).stage(Stage::Dictionary)?)
        }
        EncodingMode::Passthrough => None,
    };
    timer.lap("dictionary");
    Ok(FeatureExtractor { config: cfg.clone(), zca, dictionary })
}

/// Fits the ridge classifier on descriptors of `gallery` using a fixed extractor.
pub fn enroll(extractor: FeatureExtractor, gallery: &[GrayImage]) -> Result<Model> {
    enroll_timed(extractor, gallery, &mut StageTimer::start())
}

fn enroll_timed(extractor: FeatureExtractor, gallery: &[GrayImage], timer: &mut StageTimer) -> Result<Model> {
    if gallery.is_empty() {
        return Err(Error::Empty("gallery")).stage(Stage::Classifier);
    }
    let x = extractor.describe_all(gallery)?;
    timer.lap("describe");
    let labels: Vec<String> = gallery.iter().map(|i| i.subject_id.clone()).collect();
    let ridge = train_ridge(x.view(), &labels, extractor.config.lambda).stage(Stage::Classifier)?;
    timer.lap("classifier");
    Ok(Model { extractor, ridge })
}

/// Uniform patch subsample of at most `max_sample_patches` rows, contrast-normalized.
fn sample_patches(train: &[GrayImage], cfg: &PipelineConfig) -> Result<Array2<f64>> {
    let side = cfg.target_side;
    let per_image = grid_len(side, cfg.patch_side, cfg.stride).pow(2);
    let total = per_image * train.len();
    let dim = cfg.patch_side * cfg.patch_side;

    // selected[i] lists the chosen patch rows of image i, ascending
    let mut selected: Vec<Vec<usize>> = vec![Vec::new(); train.len()];
    if total <= cfg.max_sample_patches {
        selected.iter_mut().for_each(|s| *s = (0..per_image).collect());
    } else {
        let mut idx: Vec<usize> = (0..total).collect();
        let mut rng = keyed_rng(cfg.seed, 2, b"patch-sample");
        partial_shuffle(&mut idx, cfg.max_sample_patches, &mut rng);
        let mut chosen = idx[..cfg.max_sample_patches].to_vec();
        chosen.sort_unstable();
        for g in chosen {
            selected[g / per_image].push(g % per_image);
        }
    }

    let blocks: Vec<Vec<f64>> = train
        .par_iter()
        .zip(&selected)
        .map(|(img, rows)| {
            let mut p = extract_patches(&conform(img, side), cfg.patch_side, cfg.stride)?;
            p.normalize();
            let mut out = Vec::with_capacity(rows.len() * dim);
            for &r in rows {
                out.extend(p.vectors.row(r).iter());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n = blocks.iter().map(|b| b.len()).sum::<usize>() / dim;
    Ok(Array2::from_shape_vec((n, dim), blocks.concat()).expect("shape"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionCount {
    pub truth: String,
    pub predicted: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Non-zero (truth, predicted) cells, sorted.
    pub confusion: Vec<ConfusionCount>,
}

/// Classifies every test image; subjects unknown to the model always count as errors.
pub fn evaluate(model: &Model, test: &[GrayImage]) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::Empty("test set")).stage(Stage::Evaluate);
    }
    let x = model.extractor.describe_all(test)?;
    let predicted: Vec<usize> = x
        .rows()
        .into_iter()
        .map(|row| model.ridge.predict_index(row))
        .collect::<Result<_>>()
        .stage(Stage::Evaluate)?;
    let mut cells: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut correct = 0;
    for (img, &p) in test.iter().zip(&predicted) {
        let label = model.ridge.classes[p].as_str();
        if label == img.subject_id {
            correct += 1;
        }
        *cells.entry((img.subject_id.as_str(), label)).or_default() += 1;
    }
    let confusion = cells
        .into_iter()
        .map(|((t, p), count)| ConfusionCount { truth: t.to_string(), predicted: p.to_string(), count })
        .collect();
    Ok(EvalResult { correct, total: test.len(), accuracy: correct as f64 / test.len() as f64, confusion })
}

/// Scores of one descriptor against every class, for diagnostics.
pub fn class_scores(model: &Model, descriptor: &[f64]) -> Result<Vec<f64>> {
    model.ridge.scores(ArrayView1::from(descriptor))
}
