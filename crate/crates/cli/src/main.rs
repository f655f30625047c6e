//! `sopool` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sopool_core::dataset::{load_corpus, read_gray, split_manifest, GrayImage, LoadedCorpus};
use sopool_core::pooling::encode_descriptor;
use sopool_core::synth::{self, SynthKind, SynthSpec};
use sopool_core::{
    ablate_encoding, ablate_grid, benchmark, enroll, evaluate, fit_pipeline, make_splits, EncodingMode, Model,
    PipelineConfig,
};

#[derive(Parser)]
#[command(name = "sopool", version, about = "Second-order pooled raw-patch face identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on every image of a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write the SOPD descriptor of one image.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on a probe set, optionally re-enrolling the classifier on a gallery.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Random-split benchmark reporting mean ± std accuracy.
    Benchmark {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: ReportArgs,
        /// Write the `run,role,subject,path` split manifest here.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Encoding on/off or dictionary-size × pyramid-depth ablations.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(value_enum)]
        kind: AblationKind,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        atoms_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
        levels_grid: Vec<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: ReportArgs,
    },
    /// Generate a deterministic synthetic corpus of PGM files.
    Synth {
        #[arg(long)]
        subjects: usize,
        #[arg(long)]
        per_subject: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, value_enum, default_value = "identity")]
        kind: Kind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    Encoding,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Identity,
    Texture,
}

#[derive(Args)]
struct ReportArgs {
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write per-stage wall-clock timings (JSON) here.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// `key=value` config file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target_side: Option<usize>,
    #[arg(long)]
    patch_side: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    #[arg(long)]
    eps_zca: Option<f64>,
    #[arg(long)]
    eps_spd: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    l2_normalize: Option<bool>,
    #[arg(long, value_parser = ["encode", "passthrough"])]
    encoding_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    train_per_subject: Option<usize>,
    #[arg(long)]
    test_per_subject: Option<usize>,
    #[arg(long)]
    kmeans_iters: Option<usize>,
    #[arg(long)]
    max_sample_patches: Option<usize>,
    #[arg(long)]
    normalize_atoms: Option<bool>,
    #[arg(long)]
    shared_dictionary: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("config: {}", path.display()))?;
                PipelineConfig::from_kv(&text).context("config")?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        apply!(
            target_side, patch_side, stride, atoms, alpha, grids, eps_zca, eps_spd, lambda, l2_normalize, seed,
            runs, train_per_subject, test_per_subject, kmeans_iters, max_sample_patches, normalize_atoms
        );
        if let Some(mode) = &self.encoding_mode {
            cfg.encoding_mode = mode.parse::<EncodingMode>().context("config")?;
        }
        if self.shared_dictionary {
            cfg.shared_dictionary = true;
        }
        cfg.validate().context("config")?;
        Ok(cfg)
    }
}

fn load(dir: &Path, side: usize) -> Result<Vec<GrayImage>> {
    let LoadedCorpus { images, failures } = load_corpus(dir, side).context("load")?;
    for f in &failures {
        eprintln!("warning: skipped {}: {}", f.path.display(), f.reason);
    }
    eprintln!("loaded {} images from {}", images.len(), dir.display());
    Ok(images)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("write {}", path.display()))
}

fn write_reports(args: &ReportArgs, json: String, timings: Option<String>) -> Result<()> {
    if let Some(p) = &args.json {
        write(p, json)?;
    }
    if let (Some(p), Some(t)) = (&args.timings, timings) {
        write(p, t)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { corpus, out, config } => {
            let cfg = config.resolve()?;
            let images = load(&corpus, cfg.target_side)?;
            let model = fit_pipeline(&images, &cfg)?;
            model.save(&out)?;
            let self_eval = evaluate(&model, &images)?;
            println!(
                "trained on {} images / {} subjects; training accuracy {:.2}%",
                images.len(),
                model.ridge.classes.len(),
                100.0 * self_eval.accuracy
            );
        }
        Command::Extract { model, image, out } => {
            let model = Model::load(&model)?;
            let (rows, cols, px) = read_gray(&image).context("load")?;
            let img = GrayImage::new(rows, cols, px, "", image.to_string_lossy()).context("load")?;
            let d = model.extractor.describe(&img)?;
            write(&out, encode_descriptor(&d))?;
            println!("{} values ({} cells, width {})", d.values.len(), d.cells, d.width);
        }
        Command::Eval { model, gallery, probe, json } => {
            let mut model = Model::load(&model)?;
            let side = model.config().target_side;
            if let Some(dir) = gallery {
                let gallery = load(&dir, side)?;
                model = enroll(model.extractor, &gallery)?;
            }
            let probe = load(&probe, side)?;
            let result = evaluate(&model, &probe)?;
            println!("accuracy: {:.2}% ({}/{})", 100.0 * result.accuracy, result.correct, result.total);
            if let Some(p) = json {
                write(&p, serde_json::to_string_pretty(&result)?)?;
            }
        }
        Command::Benchmark { corpus, config, output, manifest } => {
            let cfg = config.resolve()?;
            let images = load(&corpus, cfg.target_side)?;
            if let Some(p) = manifest {
                let plan = make_splits(&images, &cfg.split_spec()).context("split")?;
                write(&p, split_manifest(&plan, &images))?;
            }
            let report = benchmark(&images, &cfg)?;
            print!("{}", report.summary());
            write_reports(&output, report.to_json(), Some(report.timings_json()))?;
        }
        Command::Ablate { corpus, kind, atoms_grid, levels_grid, csv, config, output } => {
            let cfg = config.resolve()?;
            let images = load(&corpus, cfg.target_side)?;
            match kind {
                AblationKind::Encoding => {
                    let ab = ablate_encoding(&images, &cfg)?;
                    print!("{}", ab.summary());
                    write_reports(&output, ab.to_json(), None)?;
                }
                AblationKind::Grid => {
                    let table = ablate_grid(&images, &cfg, &atoms_grid, &levels_grid)?;
                    let text = table.to_csv();
                    print!("{text}");
                    if let Some(p) = csv {
                        write(&p, &text)?;
                    }
                    write_reports(&output, serde_json::to_string_pretty(&table)?, None)?;
                }
            }
        }
        Command::Synth { subjects, per_subject, out, seed, side, kind } => {
            let kind = match kind {
                Kind::Identity => SynthKind::Identity,
                Kind::Texture => SynthKind::Texture,
            };
            let images = synth::generate(&SynthSpec { kind, subjects, per_subject, side, seed }).context("synth")?;
            synth::write_corpus(&out, &images).context("synth")?;
            println!("wrote {} images to {}", images.len(), out.display());
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("SOPOOL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().with_context(|| format!("SOPOOL_THREADS={value:?}"))?;
    if threads == 0 {
        bail!("SOPOOL_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
