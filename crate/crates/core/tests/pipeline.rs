use sopool_core::pipeline::StageTimer;
use sopool_core::pooling::{decode_descriptor, descriptor_len, encode_descriptor};
use sopool_core::synth::{generate, SynthKind, SynthSpec};
use sopool_core::{
    ablate_encoding, ablate_grid, benchmark, evaluate, fit_pipeline, EncodingMode, GrayImage, Model, PipelineConfig,
};

/// Small geometry that keeps the full pipeline fast.
fn small_cfg() -> PipelineConfig {
    PipelineConfig {
        target_side: 24,
        patch_side: 4,
        atoms: 6,
        grids: vec![1, 2, 4],
        kmeans_iters: 30,
        runs: 2,
        train_per_subject: 3,
        test_per_subject: 2,
        seed: 5,
        ..Default::default()
    }
}

fn corpus(kind: SynthKind, subjects: usize, per_subject: usize, side: usize) -> Vec<GrayImage> {
    generate(&SynthSpec { kind, subjects, per_subject, side, seed: 11 }).unwrap()
}

#[test]
fn separable_corpus_fits_perfectly() {
    let train = corpus(SynthKind::Identity, 3, 4, 24);
    let model = fit_pipeline(&train, &small_cfg()).unwrap();
    assert_eq!(model.ridge.classes.len(), 3);
    let result = evaluate(&model, &train).unwrap();
    assert_eq!(result.accuracy, 1.0);
    assert_eq!(result.total, 12);
    assert_eq!(result.confusion.iter().map(|c| c.count).sum::<usize>(), 12);
}

#[test]
fn passthrough_pools_patch_sized_matrices() {
    let train = corpus(SynthKind::Identity, 2, 3, 24);
    let cfg = PipelineConfig { encoding_mode: EncodingMode::Passthrough, ..small_cfg() };
    let model = fit_pipeline(&train, &cfg).unwrap();
    assert!(model.extractor.dictionary.is_none());
    let d = model.extractor.describe(&train[0]).unwrap();
    assert_eq!(d.width, 16);
    assert_eq!(d.values.len(), descriptor_len(16, &[1, 2, 4]));
}

#[test]
fn default_config_descriptor_length() {
    let train = corpus(SynthKind::Identity, 2, 2, 64);
    let cfg = PipelineConfig { kmeans_iters: 5, ..Default::default() };
    let model = fit_pipeline(&train, &cfg).unwrap();
    let d = model.extractor.describe(&train[0]).unwrap();
    assert_eq!(d.values.len(), 99_220);
    assert_eq!(model.ridge.dim(), 99_220);
}

#[test]
fn model_round_trip_predicts_identically() {
    let images = corpus(SynthKind::Identity, 3, 4, 24);
    for mode in [EncodingMode::Encode, EncodingMode::Passthrough] {
        let model = fit_pipeline(&images[..9], &PipelineConfig { encoding_mode: mode, ..small_cfg() }).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"SOPM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        for img in &images {
            let a = model.extractor.describe(img).unwrap();
            let b = back.extractor.describe(img).unwrap();
            assert_eq!(a.values, b.values);
            assert_eq!(model.predict(img).unwrap(), back.predict(img).unwrap());
        }
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    let dir = tempfile::tempdir().unwrap();
    let model = fit_pipeline(&images, &small_cfg()).unwrap();
    let path = dir.path().join("m.sopm");
    model.save(&path).unwrap();
    assert_eq!(Model::load(&path).unwrap(), model);
}

#[test]
fn descriptor_file_round_trip() {
    let images = corpus(SynthKind::Identity, 2, 3, 24);
    let model = fit_pipeline(&images, &small_cfg()).unwrap();
    let d = model.extractor.describe(&images[0]).unwrap();
    let back = decode_descriptor(&encode_descriptor(&d)).unwrap();
    assert_eq!((back.width, back.cells), (12, 21));
    for (a, b) in d.values.iter().zip(&back.values) {
        assert_eq!(*a as f32 as f64, *b);
    }
}

#[test]
fn evaluation_edge_cases() {
    let images = corpus(SynthKind::Identity, 3, 3, 24);
    let model = fit_pipeline(&images, &small_cfg()).unwrap();
    let err = evaluate(&model, &[]).unwrap_err();
    assert!(err.to_string().starts_with("evaluate:"), "{err}");

    let gray: Vec<GrayImage> =
        (0..4).map(|i| GrayImage::new(24, 24, vec![0.5; 576], format!("subject_00{}", i % 3), "gray").unwrap()).collect();
    let result = evaluate(&model, &gray).unwrap();
    assert_eq!(result.total, 4);
}

#[test]
fn stage_named_errors() {
    let one_subject = corpus(SynthKind::Identity, 1, 4, 24);
    let err = fit_pipeline(&one_subject, &small_cfg()).unwrap_err();
    assert!(err.to_string().starts_with("config:"), "{err}");

    let images = corpus(SynthKind::Identity, 2, 2, 24);
    let cfg = PipelineConfig { atoms: 5000, max_sample_patches: 100, ..small_cfg() };
    let err = fit_pipeline(&images, &cfg).unwrap_err();
    assert!(err.to_string().starts_with("dictionary:"), "{err}");
}

#[test]
fn benchmark_report_contract() {
    let images = corpus(SynthKind::Identity, 4, 6, 24);
    let mut cfg = small_cfg();
    cfg.runs = 3;
    let report = benchmark(&images, &cfg).unwrap();
    assert_eq!(report.runs.len(), 3);
    assert_eq!(report.subjects, 4);
    for r in &report.runs {
        assert_eq!((r.train_images, r.test_images), (12, 8));
    }

    let accs = report.accuracies();
    let mean = accs.iter().sum::<f64>() / 3.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((mean - report.mean_accuracy).abs() <= 1e-12);
    assert!((std - report.std_accuracy).abs() <= 1e-12);

    let staged: f64 = report.timings.iter().map(|t| t.seconds).sum();
    assert!((staged - report.total_seconds).abs() <= 0.05 * report.total_seconds, "{staged} vs {}", report.total_seconds);

    let again = benchmark(&images, &cfg).unwrap();
    assert_eq!(report.to_json(), again.to_json());
    assert!(!report.to_json().contains("seconds"));
}

#[test]
fn benchmark_is_thread_count_independent() {
    let images = corpus(SynthKind::Identity, 3, 6, 24);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| benchmark(&images, &small_cfg()).unwrap().to_json())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn shared_dictionary_variant_runs() {
    let images = corpus(SynthKind::Identity, 3, 6, 24);
    let report = benchmark(&images, &PipelineConfig { shared_dictionary: true, ..small_cfg() }).unwrap();
    assert_eq!(report.runs.len(), 2);
}

#[test]
fn excluded_subjects_are_reported() {
    let mut images = corpus(SynthKind::Identity, 3, 6, 24);
    images.extend(corpus(SynthKind::Identity, 4, 2, 24).into_iter().skip(6).map(|mut i| {
        i.subject_id = "short".into();
        i
    }));
    let report = benchmark(&images, &small_cfg()).unwrap();
    assert_eq!(report.excluded_subjects.len(), 1);
    assert_eq!(report.excluded_subjects[0].subject, "short");
}

#[test]
fn encoding_ablation_shares_splits() {
    let images = corpus(SynthKind::Texture, 4, 6, 24);
    let ab = ablate_encoding(&images, &small_cfg()).unwrap();
    assert!(ab.splits_identical);
    assert_eq!(ab.with_encoding.split_fingerprint, ab.without_encoding.split_fingerprint);
    assert_eq!(ab.with_encoding.config.encoding_mode, EncodingMode::Encode);
    assert_eq!(ab.without_encoding.config.encoding_mode, EncodingMode::Passthrough);
}

#[test]
fn grid_ablation_table_shape() {
    let images = corpus(SynthKind::Identity, 3, 5, 24);
    let cfg = PipelineConfig { runs: 1, ..small_cfg() };
    let table = ablate_grid(&images, &cfg, &[4, 6], &[2, 3]).unwrap();
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pyramid_levels,4,6");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("3,"));
    assert_eq!(lines[1].matches('±').count(), 2);
}

#[test]
fn stage_timer_laps_cover_elapsed_time() {
    let start = std::time::Instant::now();
    let mut t = StageTimer::start();
    std::thread::sleep(std::time::Duration::from_millis(5));
    t.lap("a");
    t.lap("b");
    let total: f64 = t.laps.iter().map(|l| l.1).sum();
    assert!(total <= start.elapsed().as_secs_f64());
    assert_eq!(t.laps.len(), 2);
}
