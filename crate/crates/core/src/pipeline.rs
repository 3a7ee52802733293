//! Stage wiring: in-memory per-sample processing and the file-based runner
//! behind the CLI.
//!
//! The file runner serialises each intermediate, then parses it back before
//! the next stage, so a composed run sees exactly what the individual
//! stage commands would read from disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Extraction, PipelineConfig};
use crate::data_io;
use crate::error::{Error, ErrorKind, Result};
use crate::features::{extract_features, FeatureVector};
use crate::gsa::{denoise, GsaResult};
use crate::preprocess::preprocess_all;
use crate::roi::{build_rois, extract_raw_channels};
use crate::select::{select_informative, SelectionResult};
use crate::svm::{Prediction, TrainedModel};
use crate::types::{ChannelId, CleanChannels, DepthSample, Label, RawChannels};

/// The chest-minus-pelvis channel used by single-ROI extraction.
pub const SINGLE_ROI_CHANNEL: ChannelId = ChannelId::ALL[0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extract,
    Preprocess,
    Denoise,
    Select,
    Features,
    Predict,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Preprocess => "preprocess",
            Stage::Denoise => "denoise",
            Stage::Select => "select",
            Stage::Features => "features",
            Stage::Predict => "predict",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "extract" => Stage::Extract,
            "preprocess" => Stage::Preprocess,
            "denoise" => Stage::Denoise,
            "select" => Stage::Select,
            "features" => Stage::Features,
            "predict" => Stage::Predict,
            _ => return Err(Error::parameter("stop_after", format!("unknown stage {s:?}"))),
        })
    }
}

pub fn extract(sample: &DepthSample, cfg: &PipelineConfig) -> Result<RawChannels> {
    let rois = build_rois(
        &sample.joints,
        sample.depth.width,
        sample.depth.height,
        cfg.chestwall_side,
    );
    extract_raw_channels(&sample.depth, &rois)
}

/// Preprocess, then restrict to the chest/pelvis channel in single-ROI mode.
pub fn preprocess(raw: &RawChannels, cfg: &PipelineConfig) -> Result<CleanChannels> {
    let mut clean = preprocess_all(raw, &cfg.preprocess)?;
    if cfg.extraction == Extraction::SingleRoi {
        restrict_to_single_roi(&mut clean)?;
    }
    Ok(clean)
}

pub fn restrict_to_single_roi(clean: &mut CleanChannels) -> Result<()> {
    let keep = SINGLE_ROI_CHANNEL.index();
    if !clean.usable[keep] {
        return Err(Error::UnusableChannel {
            channel: SINGLE_ROI_CHANNEL.name().into(),
            message: "single-ROI extraction needs this channel".into(),
        });
    }
    for c in 0..6 {
        if c != keep {
            clean.usable[c] = false;
            clean.channels[c].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(())
}

/// Graph smoothing, or a pass-through when disabled.
pub fn smooth(clean: &CleanChannels, cfg: &PipelineConfig) -> Result<(CleanChannels, Option<GsaResult>)> {
    if cfg.use_gsa {
        let r = denoise(clean, &cfg.gsa)?;
        Ok((r.denoised.clone(), Some(r)))
    } else {
        Ok((clean.clone(), None))
    }
}

pub fn select(denoised: &CleanChannels, cfg: &PipelineConfig) -> Result<SelectionResult> {
    select_informative(&denoised.channels, &denoised.usable, denoised.frame_rate, &cfg.select)
}

pub fn features(signal: &[f64], fs: f64, cfg: &PipelineConfig) -> Result<FeatureVector> {
    extract_features(signal, fs, &cfg.features)
}

/// All in-memory stage outputs of one sample.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub raw: RawChannels,
    pub clean: CleanChannels,
    pub denoised: CleanChannels,
    pub gsa: Option<GsaResult>,
    pub selection: SelectionResult,
    pub features: FeatureVector,
}

pub fn process_raw(raw: RawChannels, cfg: &PipelineConfig) -> Result<SampleOutcome> {
    let clean = preprocess(&raw, cfg)?;
    let (denoised, gsa) = smooth(&clean, cfg)?;
    let selection = select(&denoised, cfg)?;
    let features = features(&selection.signal, denoised.frame_rate, cfg)?;
    Ok(SampleOutcome {
        raw,
        clean,
        denoised,
        gsa,
        selection,
        features,
    })
}

pub fn process_sample(sample: &DepthSample, cfg: &PipelineConfig) -> Result<SampleOutcome> {
    process_raw(extract(sample, cfg)?, cfg)
}

// ---- file-based runner ----

pub const RAW_FILE: &str = "channels.csv";
pub const CLEAN_FILE: &str = "clean.csv";
pub const DENOISED_FILE: &str = "denoised.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SELECTED_FILE: &str = "selected.csv";
pub const INDICES_FILE: &str = "indices.json";
pub const FEATURES_FILE: &str = "features.json";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const FAILURE_FILE: &str = "failure.json";

/// Objective trace as `iteration,objective`.
pub fn format_trace(trace: &[f64]) -> String {
    let mut out = String::from("iteration,objective\n");
    for (i, v) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicesReport {
    pub selected: ChannelId,
    pub indices: Vec<(ChannelId, Option<f64>)>,
    pub config_hash: String,
}

impl IndicesReport {
    pub fn of(sel: &SelectionResult, config_hash: &str) -> Self {
        IndicesReport {
            selected: sel.channel,
            indices: ChannelId::ALL.iter().map(|id| (*id, sel.indices[id.index()])).collect(),
            config_hash: config_hash.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesFile {
    pub id: String,
    pub subject_id: Option<String>,
    pub label: Option<Label>,
    pub channel: Option<ChannelId>,
    pub features: FeatureVector,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub id: String,
    pub label: Label,
    pub margin: f64,
    pub config_hash: String,
}

/// `model.json`: the trained model plus the hash of the config it was
/// trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: TrainedModel,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub sample: String,
    pub stage: String,
    pub kind: String,
    pub error: String,
    pub config_hash: String,
}

pub fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Io => "io",
        ErrorKind::Format => "format",
        ErrorKind::Parameter => "parameter",
        ErrorKind::Numerical => "numerical",
    }
}

/// Error annotated with the stage it came from.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Tracks files written during one run so they can be removed on failure.
struct Writer {
    written: Vec<PathBuf>,
}

impl Writer {
    fn text(&mut self, path: PathBuf, text: &str) -> Result<()> {
        data_io::write_text(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    fn rollback(&mut self) {
        for p in self.written.drain(..).rev() {
            let _ = std::fs::remove_file(p);
        }
    }
}

/// What a single-sample run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRun {
    pub id: String,
    pub subject_id: String,
    pub label: Label,
    pub features: Option<FeatureVector>,
    pub prediction: Option<Prediction>,
}

/// Run one sample directory through the stages, writing every intermediate
/// into `out`. On failure the files written by this run are removed and
/// `failure.json` is written instead.
pub fn run_sample_dir(
    sample_dir: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    model: Option<&TrainedModel>,
    stop_after: Stage,
) -> std::result::Result<SampleRun, StageError> {
    cfg.validate().at(Stage::Extract)?;
    let mut w = Writer { written: Vec::new() };
    let sample_name = sample_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let result = run_stages(sample_dir, out, cfg, model, stop_after, &mut w);
    if let Err(e) = &result {
        w.rollback();
        let report = FailureReport {
            sample: sample_name,
            stage: e.stage.name().into(),
            kind: kind_name(e.error.kind()).into(),
            error: e.error.to_string(),
            config_hash: cfg.hash(),
        };
        // best effort: the original error matters more than the report
        let _ = data_io::create_dir(out);
        let _ = data_io::write_json(&out.join(FAILURE_FILE), &report);
    }
    result
}

/// Run every sample directory into `out/<sample id>/`, in parallel.
/// Results come back in input order.
pub fn run_dataset(
    dirs: &[PathBuf],
    out: &Path,
    cfg: &PipelineConfig,
    model: Option<&TrainedModel>,
    stop_after: Stage,
) -> Vec<std::result::Result<SampleRun, StageError>> {
    use rayon::prelude::*;
    dirs.par_iter()
        .map(|dir| {
            let name = dir.file_name().map(|s| s.to_os_string()).unwrap_or_default();
            run_sample_dir(dir, &out.join(name), cfg, model, stop_after)
        })
        .collect()
}

fn run_stages(
    sample_dir: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    model: Option<&TrainedModel>,
    stop_after: Stage,
    w: &mut Writer,
) -> std::result::Result<SampleRun, StageError> {
    let hash = cfg.hash();
    let sample = data_io::read_depth_sample(sample_dir).at(Stage::Extract)?;
    let mut run = SampleRun {
        id: sample.id.clone(),
        subject_id: sample.subject_id.clone(),
        label: sample.label,
        features: None,
        prediction: None,
    };
    data_io::create_dir(out).at(Stage::Extract)?;
    let _ = std::fs::remove_file(out.join(FAILURE_FILE));

    let raw = extract(&sample, cfg).at(Stage::Extract)?;
    let text = data_io::stamp_csv(&hash, &data_io::format_raw_channels(&raw));
    w.text(out.join(RAW_FILE), &text).at(Stage::Extract)?;
    if stop_after == Stage::Extract {
        return Ok(run);
    }

    let raw = data_io::parse_raw_channels(&text).at(Stage::Preprocess)?;
    let clean = preprocess(&raw, cfg).at(Stage::Preprocess)?;
    let text = data_io::stamp_csv(&hash, &data_io::format_clean_channels(&clean));
    w.text(out.join(CLEAN_FILE), &text).at(Stage::Preprocess)?;
    if stop_after == Stage::Preprocess {
        return Ok(run);
    }

    let clean = data_io::parse_clean_channels(&text).at(Stage::Denoise)?;
    let (denoised, gsa) = smooth(&clean, cfg).at(Stage::Denoise)?;
    let text = data_io::stamp_csv(&hash, &data_io::format_clean_channels(&denoised));
    w.text(out.join(DENOISED_FILE), &text).at(Stage::Denoise)?;
    if let Some(g) = &gsa {
        w.text(
            out.join(TRACE_FILE),
            &data_io::stamp_csv(&hash, &format_trace(&g.trace)),
        )
        .at(Stage::Denoise)?;
    }
    if stop_after == Stage::Denoise {
        return Ok(run);
    }

    let denoised = data_io::parse_clean_channels(&text).at(Stage::Select)?;
    let selection = select(&denoised, cfg).at(Stage::Select)?;
    let text = data_io::stamp_csv(&hash, &data_io::format_signal(denoised.frame_rate, &selection.signal));
    w.text(out.join(SELECTED_FILE), &text).at(Stage::Select)?;
    w.text(
        out.join(INDICES_FILE),
        &data_io::to_json_string(&IndicesReport::of(&selection, &hash)),
    )
    .at(Stage::Select)?;
    if stop_after == Stage::Select {
        return Ok(run);
    }

    let (fs, signal) = data_io::parse_signal(&text).at(Stage::Features)?;
    let fv = features(&signal, fs, cfg).at(Stage::Features)?;
    let file = FeaturesFile {
        id: sample.id.clone(),
        subject_id: Some(sample.subject_id.clone()),
        label: Some(sample.label),
        channel: Some(selection.channel),
        features: fv,
        config_hash: hash.clone(),
    };
    w.text(out.join(FEATURES_FILE), &data_io::to_json_string(&file))
        .at(Stage::Features)?;
    run.features = Some(fv);
    if stop_after == Stage::Features {
        return Ok(run);
    }

    if let Some(model) = model {
        let p = model.predict(&fv.to_array()).at(Stage::Predict)?;
        let file = PredictionFile {
            id: sample.id.clone(),
            label: p.label,
            margin: p.margin,
            config_hash: hash,
        };
        w.text(out.join(PREDICTION_FILE), &data_io::to_json_string(&file))
            .at(Stage::Predict)?;
        run.prediction = Some(p);
    }
    Ok(run)
}
