//! Face identification from raw intensity patches with second-order pooling.
//!
//! The pipeline densely extracts contrast-normalized patches, whitens them,
//! encodes them against a small K-means dictionary with a split soft
//! threshold, average-pools outer products of the codes over a spatial
//! pyramid, maps each pooled SPD matrix through the matrix logarithm and
//! classifies the concatenated descriptor with closed-form ridge regression.
//!
//! Stages are exposed as independent modules so each can be tested and
//! benchmarked on its own; [`pipeline`] wires them together.

pub mod classifier;
pub mod dataset;
pub mod dictionary;
pub mod encoding;
mod error;
pub mod linalg;
pub mod patches;
pub mod pipeline;
pub mod pooling;
pub mod synth;
pub mod whitening;

pub use classifier::{predict, train_ridge, RidgeForm, RidgeModel};
pub use dataset::{load_corpus, make_splits, GrayImage, LoadedCorpus, Split, SplitSpec};
pub use dictionary::{train_kmeans, Dictionary, KMeansOptions};
pub use encoding::{encode, passthrough, EncodedFeatures};
pub use error::{Error, Result, Stage};
pub use patches::{extract_patches, normalize_patch, PatchSet};
pub use pipeline::{
    ablate_encoding, ablate_grid, benchmark, enroll, evaluate, fit_pipeline, BenchmarkReport, EncodingAblation,
    EncodingMode, EvalResult, FeatureExtractor, GridAblation, Model, PipelineConfig,
};
pub use pooling::{log_spd, pool_cell, pool_pyramid, PooledDescriptor, PyramidConfig};
pub use whitening::{apply_zca, fit_zca, ZcaTransform};
