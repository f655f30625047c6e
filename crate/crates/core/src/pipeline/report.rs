use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::config::{EncodingMode, PipelineConfig};
use super::{enroll_timed, evaluate, fit_extractor, ConfusionCount, FeatureExtractor, StageTimer};
use crate::dataset::{keyed_rng, make_splits, sha256_hex, split_manifest, GrayImage};
use crate::error::{Error, Result, Stage, StageExt};
use crate::pooling::MAX_PYRAMID;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedSubject {
    pub subject: String,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub confusion: Vec<ConfusionCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Outcome of a random-split benchmark.
///
/// Wall-clock timings are kept out of the JSON form so that identical
/// inputs produce byte-identical reports; see [`BenchmarkReport::timings_json`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub config: PipelineConfig,
    pub images: usize,
    pub subjects: usize,
    pub excluded_subjects: Vec<ExcludedSubject>,
    /// SHA-256 of the split manifest.
    pub split_fingerprint: String,
    pub runs: Vec<RunReport>,
    pub mean_accuracy: f64,
    /// Population standard deviation over runs.
    pub std_accuracy: f64,
    #[serde(skip)]
    pub timings: Vec<StageTime>,
    #[serde(skip)]
    pub total_seconds: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl BenchmarkReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn timings_json(&self) -> String {
        #[derive(Serialize)]
        struct T<'a> {
            stages: &'a [StageTime],
            total_seconds: f64,
        }
        serde_json::to_string_pretty(&T { stages: &self.timings, total_seconds: self.total_seconds })
            .expect("timings serialize")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} images, {} subjects ({} excluded), encoding={}, K={}, grids={:?}",
            self.images,
            self.subjects,
            self.excluded_subjects.len(),
            self.config.encoding_mode.as_str(),
            self.config.atoms,
            self.config.grids
        );
        for r in &self.runs {
            let _ = writeln!(s, "  run {}: {:.2}% ({}/{})", r.run, 100.0 * r.accuracy, r.correct, r.test_images);
        }
        let _ = writeln!(s, "accuracy: {:.2} ± {:.2} %", 100.0 * self.mean_accuracy, 100.0 * self.std_accuracy);
        let _ = writeln!(s, "timings (s):");
        for t in &self.timings {
            let _ = writeln!(s, "  {:<24} {:>9.3}", t.stage, t.seconds);
        }
        let _ = writeln!(s, "  {:<24} {:>9.3}", "total", self.total_seconds);
        s
    }
}

fn run_seed(seed: u64, run: usize) -> u64 {
    keyed_rng(seed, 3, &(run as u64).to_le_bytes()).random()
}

/// Random N-train/M-test per-subject splits, fit and evaluated per run.
pub fn benchmark(images: &[GrayImage], cfg: &PipelineConfig) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let mut timer = StageTimer::start();
    cfg.validate().stage(Stage::Config)?;
    let plan = make_splits(images, &cfg.split_spec()).stage(Stage::Split)?;
    let split_fingerprint = sha256_hex(split_manifest(&plan, images).as_bytes());
    timer.lap("split");

    let pick = |idx: &[usize]| -> Vec<GrayImage> { idx.iter().map(|&i| images[i].clone()).collect() };

    let shared: Option<FeatureExtractor> = if cfg.shared_dictionary {
        let train = pick(&plan.splits[0].train);
        let mut sub = StageTimer::start();
        let ex = fit_extractor(&train, &PipelineConfig { seed: run_seed(cfg.seed, 0), ..cfg.clone() }, &mut sub)?;
        timer.lap("shared/extractor");
        Some(ex)
    } else {
        None
    };

    let mut runs = Vec::with_capacity(plan.splits.len());
    for split in &plan.splits {
        let run_cfg = PipelineConfig { seed: run_seed(cfg.seed, split.run), ..cfg.clone() };
        let train = pick(&split.train);
        let test = pick(&split.test);
        let mut run_timer = StageTimer::start();
        let extractor = match &shared {
            Some(ex) => {
                run_timer.lap("extractor(shared)");
                ex.clone()
            }
            None => fit_extractor(&train, &run_cfg, &mut run_timer)?,
        };
        let model = enroll_timed(extractor, &train, &mut run_timer)?;
        let result = evaluate(&model, &test)?;
        run_timer.lap("evaluate");
        timer.laps.extend(run_timer.laps.into_iter().map(|(name, t)| (format!("run{}/{}", split.run, name), t)));
        timer.last = std::time::Instant::now();
        runs.push(RunReport {
            run: split.run,
            train_images: train.len(),
            test_images: test.len(),
            accuracy: result.accuracy,
            correct: result.correct,
            confusion: result.confusion,
        });
    }

    let (mean_accuracy, std_accuracy) = mean_std(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let subjects = plan.splits[0].train.iter().map(|&i| &images[i].subject_id).collect::<std::collections::BTreeSet<_>>().len();
    timer.lap("report");
    Ok(BenchmarkReport {
        config: cfg.clone(),
        images: images.len(),
        subjects,
        excluded_subjects: plan
            .excluded
            .into_iter()
            .map(|(subject, images)| ExcludedSubject { subject, images })
            .collect(),
        split_fingerprint,
        runs,
        mean_accuracy,
        std_accuracy,
        timings: timer.laps.into_iter().map(|(stage, seconds)| StageTime { stage, seconds }).collect(),
        total_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Paired benchmark with and without the soft-threshold encoder on identical splits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodingAblation {
    pub with_encoding: BenchmarkReport,
    pub without_encoding: BenchmarkReport,
    pub splits_identical: bool,
}

impl EncodingAblation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let pct = |r: &BenchmarkReport| format!("{:.2} ± {:.2}", 100.0 * r.mean_accuracy, 100.0 * r.std_accuracy);
        format!(
            "with encoding:    {} %\nwithout encoding: {} %\nsplits identical: {}\n",
            pct(&self.with_encoding),
            pct(&self.without_encoding),
            self.splits_identical
        )
    }
}

pub fn ablate_encoding(images: &[GrayImage], cfg: &PipelineConfig) -> Result<EncodingAblation> {
    let with_encoding = benchmark(images, &PipelineConfig { encoding_mode: EncodingMode::Encode, ..cfg.clone() })?;
    let without_encoding =
        benchmark(images, &PipelineConfig { encoding_mode: EncodingMode::Passthrough, ..cfg.clone() })?;
    let splits_identical = with_encoding.split_fingerprint == without_encoding.split_fingerprint;
    if !splits_identical {
        return Err(Error::InvalidArgument("paired benchmarks drew different splits".into())).stage(Stage::Split);
    }
    Ok(EncodingAblation { with_encoding, without_encoding, splits_identical })
}

/// Accuracy table over pyramid depth (rows) × dictionary size (columns).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridAblation {
    pub atoms: Vec<usize>,
    pub levels: Vec<usize>,
    /// `cells[row][col] = (mean, std)` as fractions.
    pub cells: Vec<Vec<(f64, f64)>>,
}

impl GridAblation {
    /// CSV with one row per pyramid depth and one column per dictionary size,
    /// cells formatted as `mean ± std` in percent.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pyramid_levels");
        for k in &self.atoms {
            let _ = write!(s, ",{k}");
        }
        s.push('\n');
        for (levels, row) in self.levels.iter().zip(&self.cells) {
            let _ = write!(s, "{levels}");
            for (m, sd) in row {
                let _ = write!(s, ",{:.1} ± {:.1}", 100.0 * m, 100.0 * sd);
            }
            s.push('\n');
        }
        s
    }
}

pub fn ablate_grid(
    images: &[GrayImage],
    cfg: &PipelineConfig,
    atoms: &[usize],
    levels: &[usize],
) -> Result<GridAblation> {
    if atoms.is_empty() || levels.is_empty() {
        return Err(Error::InvalidArgument("grid ablation needs dictionary sizes and depths".into()));
    }
    let mut cells = Vec::with_capacity(levels.len());
    for &depth in levels {
        if depth == 0 || depth > MAX_PYRAMID.len() {
            return Err(Error::InvalidArgument(format!("pyramid depth must be in 1..=8, got {depth}")));
        }
        let mut row = Vec::with_capacity(atoms.len());
        for &k in atoms {
            let run_cfg = PipelineConfig {
                atoms: k,
                grids: MAX_PYRAMID[..depth].to_vec(),
                encoding_mode: EncodingMode::Encode,
                ..cfg.clone()
            };
            let report = benchmark(images, &run_cfg)?;
            row.push((report.mean_accuracy, report.std_accuracy));
        }
        cells.push(row);
    }
    Ok(GridAblation { atoms: atoms.to_vec(), levels: levels.to_vec(), cells })
}
