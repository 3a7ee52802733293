//! `gaitbreath` command-line interface.
//!
//! Every stage has its own subcommand reading and writing the same files
//! that `run` produces, so a pipeline can be replayed one stage at a time.
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 format, 5 parameter,
//! 6 numerical.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gaitbreath::bench::{run_ablation, run_bench, BenchReport};
use gaitbreath::data_io::{self, read_manifest, resolve_manifest};
use gaitbreath::features::FeatureVector;
use gaitbreath::pipeline::{
    self, FeaturesFile, IndicesReport, ModelFile, PredictionFile, SampleRun, Stage, StageError,
};
use gaitbreath::svm::train_svm;
use gaitbreath::synth::{self, SynthConfig};
use gaitbreath::{Error, ErrorKind, Label, PipelineConfig, Result};

#[derive(Parser)]
#[command(
    name = "gaitbreath",
    version,
    about = "Deep-breath identification from depth video of a walking person"
)]
struct Cli {
    /// JSON config overriding the defaults (a synth config for `synth`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Six raw ROI-difference channels from a sample directory.
    Extract {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Outlier repair, detrend and bandpass.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        zthresh: Option<f64>,
    },
    /// Graph smoothing across the six channels.
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Per-iteration objective.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Keep the most periodic channel.
    Select {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Feature vector of a selected signal.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sample directory supplying id, subject and label.
        #[arg(long)]
        sample: Option<PathBuf>,
        /// indices.json from `select`, supplying the channel.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit the linear SVM on every features.json under a directory.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Dataset manifest (or its directory) whose sample labels override
        /// the labels stored in the feature files.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify one feature file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All stages end to end on one sample or a whole dataset.
    Run(RunArgs),
    /// Render a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Subject-disjoint evaluation of the configured pipeline.
    Bench(BenchArgs),
    /// The four-way extraction/processing ablation.
    Ablate(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    sample: Option<PathBuf>,
    /// Manifest file or a directory holding manifest.json.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "predict")]
    stop_after: Stage,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Io => 3,
        ErrorKind::Format => 4,
        ErrorKind::Parameter => 5,
        ErrorKind::Numerical => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_json(&data_io::read_text(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Command::Synth { out, seed } = &cli.command {
        let mut cfg = match &cli.config {
            Some(p) => data_io::read_json::<SynthConfig>(p)?,
            None => SynthConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = *s;
        }
        cfg.validate()?;
        let entries = synth::write_dataset(&cfg, out)?;
        println!("wrote {} samples to {}", entries.len(), out.display());
        return Ok(());
    }

    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Extract { sample, out } => {
            cfg.validate()?;
            let s = data_io::read_depth_sample(&sample)?;
            let raw = pipeline::extract(&s, &cfg)?;
            data_io::write_text(
                &out,
                &data_io::stamp_csv(&cfg.hash(), &data_io::format_raw_channels(&raw)),
            )
        }
        Command::Preprocess {
            input,
            out,
            order,
            zthresh,
        } => {
            if let Some(o) = order {
                cfg.preprocess.order = o;
            }
            if let Some(z) = zthresh {
                cfg.preprocess.z_thresh = z;
            }
            cfg.validate()?;
            let raw = data_io::read_channels(&input)?;
            let clean = pipeline::preprocess(&raw, &cfg)?;
            data_io::write_text(
                &out,
                &data_io::stamp_csv(&cfg.hash(), &data_io::format_clean_channels(&clean)),
            )
        }
        Command::Denoise {
            input,
            out,
            mu,
            window,
            max_iters,
            trace,
        } => {
            if let Some(m) = mu {
                cfg.gsa.mu = m;
            }
            if let Some(w) = window {
                cfg.gsa.window = w;
            }
            if let Some(n) = max_iters {
                cfg.gsa.max_iters = n;
            }
            cfg.validate()?;
            let clean = data_io::read_clean_channels(&input)?;
            let (denoised, gsa) = pipeline::smooth(&clean, &cfg)?;
            let hash = cfg.hash();
            data_io::write_text(
                &out,
                &data_io::stamp_csv(&hash, &data_io::format_clean_channels(&denoised)),
            )?;
            if let (Some(path), Some(g)) = (trace, gsa) {
                data_io::write_text(&path, &data_io::stamp_csv(&hash, &pipeline::format_trace(&g.trace)))?;
            }
            Ok(())
        }
        Command::Select { input, out, report } => {
            cfg.validate()?;
            let denoised = data_io::read_clean_channels(&input)?;
            let sel = pipeline::select(&denoised, &cfg)?;
            let hash = cfg.hash();
            data_io::write_text(
                &out,
                &data_io::stamp_csv(&hash, &data_io::format_signal(denoised.frame_rate, &sel.signal)),
            )?;
            data_io::write_json(&report, &IndicesReport::of(&sel, &hash))
        }
        Command::Features {
            input,
            out,
            sample,
            report,
        } => {
            cfg.validate()?;
            let (fs, signal) = data_io::parse_signal(&data_io::read_text(&input)?)?;
            let fv = pipeline::features(&signal, fs, &cfg)?;
            let meta = sample.as_deref().map(data_io::read_sample_meta).transpose()?;
            let channel = match report {
                Some(p) => Some(data_io::read_json::<IndicesReport>(&p)?.selected),
                None => None,
            };
            let id = match &meta {
                Some(m) => m.id.clone(),
                None => parent_name(&input),
            };
            let file = FeaturesFile {
                id,
                subject_id: meta.as_ref().map(|m| m.subject_id.clone()),
                label: meta.as_ref().map(|m| m.label),
                channel,
                features: fv,
                config_hash: cfg.hash(),
            };
            data_io::write_json(&out, &file)
        }
        Command::Train {
            features,
            labels,
            out,
            c,
            seed,
        } => {
            if let Some(c) = c {
                cfg.svm.c = c;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let model = train_from_dir(&features, labels.as_deref(), &cfg)?;
            data_io::write_json(&out, &model)
        }
        Command::Predict { model, features, out } => {
            cfg.validate()?;
            let model: ModelFile = data_io::read_json(&model)?;
            let file: FeaturesFile = data_io::read_json(&features)?;
            if model.config_hash != cfg.hash() {
                eprintln!(
                    "warning: model trained under config {}, predicting under {}",
                    model.config_hash,
                    cfg.hash()
                );
            }
            let p = model.model.predict(&file.features.to_array())?;
            let pred = PredictionFile {
                id: file.id,
                label: p.label,
                margin: p.margin,
                config_hash: cfg.hash(),
            };
            match out {
                Some(path) => data_io::write_json(&path, &pred),
                None => {
                    print!("{}", data_io::to_json_string(&pred));
                    Ok(())
                }
            }
        }
        Command::Run(args) => run(args, &cfg),
        Command::Bench(args) => bench(args, cfg, false),
        Command::Ablate(args) => bench(args, cfg, true),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

fn parent_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Every `features.json` below `dir`, in sorted path order.
fn find_feature_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_feature_files(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == pipeline::FEATURES_FILE) {
            found.push(p);
        }
    }
    Ok(())
}

fn train_from_dir(dir: &Path, labels: Option<&Path>, cfg: &PipelineConfig) -> Result<ModelFile> {
    let mut paths = Vec::new();
    find_feature_files(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::parameter(
            "features",
            format!("no {} under {}", pipeline::FEATURES_FILE, dir.display()),
        ));
    }
    let known: Option<Vec<data_io::SampleMeta>> = match labels {
        Some(m) => Some(
            read_manifest(&resolve_manifest(m))?
                .iter()
                .map(|d| data_io::read_sample_meta(d))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let mut x = Vec::with_capacity(paths.len());
    let mut y = Vec::with_capacity(paths.len());
    for p in &paths {
        let f: FeaturesFile = data_io::read_json(p)?;
        let label = match &known {
            Some(metas) => metas.iter().find(|m| m.id == f.id).map(|m| m.label),
            None => f.label,
        };
        let label =
            label.ok_or_else(|| Error::format(p.display().to_string(), format!("no label for sample `{}`", f.id)))?;
        x.push(f.features.to_array().to_vec());
        y.push(label);
    }
    let model = train_svm(&x, &y, &cfg.svm, cfg.seed)?;
    Ok(ModelFile {
        model,
        config_hash: cfg.hash(),
    })
}

#[derive(serde::Serialize)]
struct RunSummary {
    config_hash: String,
    samples: Vec<RunEntry>,
}

#[derive(serde::Serialize)]
struct RunEntry {
    id: String,
    ok: bool,
    stage: Option<String>,
    error: Option<String>,
    label: Option<Label>,
    margin: Option<f64>,
}

fn run(args: RunArgs, cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let model = match &args.model {
        Some(p) => Some(data_io::read_json::<ModelFile>(p)?.model),
        None => None,
    };

    if let Some(sample) = &args.sample {
        return match pipeline::run_sample_dir(sample, &args.out, cfg, model.as_ref(), args.stop_after) {
            Ok(r) => {
                report_run(&r);
                Ok(())
            }
            Err(e) => Err(stage_failure(e)),
        };
    }

    let manifest = resolve_manifest(args.dataset.as_deref().expect("clap requires --sample or --dataset"));
    let dirs = read_manifest(&manifest)?;
    let results = pipeline::run_dataset(&dirs, &args.out, cfg, model.as_ref(), args.stop_after);

    let mut entries = Vec::with_capacity(results.len());
    let mut first_failure: Option<StageError> = None;
    let mut train: Vec<(String, Vec<f64>, Label)> = Vec::new();
    for (dir, r) in dirs.iter().zip(results) {
        match r {
            Ok(run) => {
                if let Some(fv) = run.features {
                    train.push((run.id.clone(), FeatureVector::to_array(&fv).to_vec(), run.label));
                }
                entries.push(RunEntry {
                    id: run.id,
                    ok: true,
                    stage: None,
                    error: None,
                    label: run.prediction.map(|p| p.label),
                    margin: run.prediction.map(|p| p.margin),
                });
            }
            Err(e) => {
                eprintln!("{}: {e}", dir.display());
                entries.push(RunEntry {
                    id: dir
                        .file_name()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    ok: false,
                    stage: Some(e.stage.name().into()),
                    error: Some(e.error.to_string()),
                    label: None,
                    margin: None,
                });
                first_failure.get_or_insert(e);
            }
        }
    }

    // no model given: the labelled dataset trains one, in the same id order
    // `train` would see the feature files in
    if model.is_none() && args.stop_after == Stage::Predict && !train.is_empty() {
        train.sort_by(|a, b| a.0.cmp(&b.0));
        let (train_x, train_y): (Vec<_>, Vec<_>) = train.into_iter().map(|(_, x, y)| (x, y)).unzip();
        let m = train_svm(&train_x, &train_y, &cfg.svm, cfg.seed)?;
        data_io::write_json(
            &args.out.join("model.json"),
            &ModelFile {
                model: m,
                config_hash: cfg.hash(),
            },
        )?;
        println!(
            "trained on {} samples -> {}",
            train_x.len(),
            args.out.join("model.json").display()
        );
    }
    let ok = entries.iter().filter(|e| e.ok).count();
    data_io::write_json(
        &args.out.join("summary.json"),
        &RunSummary {
            config_hash: cfg.hash(),
            samples: entries,
        },
    )?;
    println!("{ok}/{} samples completed", dirs.len());
    match first_failure {
        Some(e) => Err(stage_failure(e)),
        None => Ok(()),
    }
}

fn stage_failure(e: StageError) -> Error {
    eprintln!("stage `{}` failed", e.stage.name());
    e.error
}

fn report_run(r: &SampleRun) {
    match &r.prediction {
        Some(p) => println!("{}: {} (margin {:.4})", r.id, p.label.as_str(), p.margin),
        None => println!("{}: done", r.id),
    }
}

fn bench(args: BenchArgs, mut cfg: PipelineConfig, ablate: bool) -> Result<()> {
    if let Some(s) = args.splits {
        cfg.protocol.splits = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dirs = read_manifest(&resolve_manifest(&args.dataset))?;
    let load = |i: usize| data_io::read_depth_sample(&dirs[i]);
    let report: BenchReport = if ablate {
        run_ablation(dirs.len(), load, &cfg)?
    } else {
        run_bench(dirs.len(), load, &cfg)?
    };
    data_io::write_json(&args.out, &report)?;
    for row in &report.rows {
        println!(
            "{:<20} {:<13} accuracy {:.3} ± {:.3}  f1 {:.3} ± {:.3}",
            row.extraction, row.processing, row.accuracy.mean, row.accuracy.std, row.f1.mean, row.f1.std
        );
    }
    if !report.failed_samples.is_empty() {
        println!(
            "{} sample/variant failures listed in the report",
            report.failed_samples.len()
        );
    }
    Ok(())
}
