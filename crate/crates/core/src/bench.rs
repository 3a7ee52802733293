//! Subject-disjoint evaluation protocol and the four-way ablation.
//!
//! Features are computed once per sample and pipeline variant; every split
//! then only retrains the SVM. Splits are drawn up front from one seed, so
//! all variants see the same test subjects, and are evaluated in parallel
//! with results collected in split order.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Extraction, PipelineConfig, ProtocolConfig};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::metrics::{evaluate, MeanStd, MetricSummary, Metrics};
use crate::pipeline::{extract, process_raw};
use crate::svm::{train_svm, SvmConfig};
use crate::types::{DepthSample, Label};

/// Table rows: extraction × processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    MultiRoiGsa,
    MultiRoiBandpass,
    SingleRoiGsa,
    SingleRoiBandpass,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::MultiRoiGsa,
        Variant::MultiRoiBandpass,
        Variant::SingleRoiGsa,
        Variant::SingleRoiBandpass,
    ];

    pub fn of(cfg: &PipelineConfig) -> Variant {
        match (cfg.extraction, cfg.use_gsa) {
            (Extraction::MultiRoi, true) => Variant::MultiRoiGsa,
            (Extraction::MultiRoi, false) => Variant::MultiRoiBandpass,
            (Extraction::SingleRoi, true) => Variant::SingleRoiGsa,
            (Extraction::SingleRoi, false) => Variant::SingleRoiBandpass,
        }
    }

    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let (extraction, use_gsa) = match self {
            Variant::MultiRoiGsa => (Extraction::MultiRoi, true),
            Variant::MultiRoiBandpass => (Extraction::MultiRoi, false),
            Variant::SingleRoiGsa => (Extraction::SingleRoi, true),
            Variant::SingleRoiBandpass => (Extraction::SingleRoi, false),
        };
        PipelineConfig {
            extraction,
            use_gsa,
            ..base.clone()
        }
    }

    pub fn extraction_name(self) -> &'static str {
        match self {
            Variant::MultiRoiGsa | Variant::MultiRoiBandpass => "multi_roi_selection",
            Variant::SingleRoiGsa | Variant::SingleRoiBandpass => "single_roi",
        }
    }

    pub fn processing_name(self) -> &'static str {
        match self {
            Variant::MultiRoiGsa | Variant::SingleRoiGsa => "bandpass_gsa",
            Variant::MultiRoiBandpass | Variant::SingleRoiBandpass => "bandpass",
        }
    }
}

/// Per-sample features under each requested variant; `None` where the
/// pipeline failed for that sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub subject_id: String,
    pub label: Label,
    pub features: Vec<Option<FeatureVector>>,
    pub errors: Vec<Option<String>>,
    /// Objective trace of each variant's graph smoothing, when it ran.
    pub gsa_traces: Vec<Option<Vec<f64>>>,
}

/// Load each of `n` samples with `load` and run every variant on it.
/// Loading errors abort; pipeline errors are recorded per sample.
pub fn featurize<F>(n: usize, load: F, base: &PipelineConfig, variants: &[Variant]) -> Result<Vec<SampleRecord>>
where
    F: Fn(usize) -> Result<DepthSample> + Sync,
{
    base.validate()?;
    let configs: Vec<PipelineConfig> = variants.iter().map(|v| v.apply(base)).collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let sample = load(i)?;
            let raw = extract(&sample, base);
            let mut features = Vec::with_capacity(configs.len());
            let mut errors = Vec::with_capacity(configs.len());
            let mut gsa_traces = Vec::with_capacity(configs.len());
            for cfg in &configs {
                let outcome = match &raw {
                    Ok(r) => process_raw(r.clone(), cfg).map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                match outcome {
                    Ok(o) => {
                        features.push(Some(o.features));
                        errors.push(None);
                        gsa_traces.push(o.gsa.map(|g| g.trace));
                    }
                    Err(e) => {
                        features.push(None);
                        errors.push(Some(e));
                        gsa_traces.push(None);
                    }
                }
            }
            Ok(SampleRecord {
                id: sample.id,
                subject_id: sample.subject_id,
                label: sample.label,
                features,
                errors,
                gsa_traces,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test_subjects: Vec<String>,
}

impl Split {
    fn is_test(&self, subject: &str) -> bool {
        self.test_subjects.iter().any(|s| s == subject)
    }
}

fn subjects(records: &[SampleRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn split_is_degenerate(records: &[SampleRecord], split: &Split) -> bool {
    let mut train = [false; 2];
    let mut test = false;
    for r in records {
        if split.is_test(&r.subject_id) {
            test = true;
        } else {
            train[usize::from(r.label == Label::Deep)] = true;
        }
    }
    !(train[0] && train[1] && test)
}

/// Draw `protocol.splits` random subject partitions. Splits whose training
/// side lacks a class are redrawn; the redraw count is returned.
pub fn draw_splits(records: &[SampleRecord], protocol: &ProtocolConfig, seed: u64) -> Result<(Vec<Split>, usize)> {
    let subs = subjects(records);
    if subs.len() < 2 {
        return Err(Error::Protocol(format!(
            "need at least 2 subjects, found {}",
            subs.len()
        )));
    }
    let n_test = ((subs.len() as f64 * protocol.test_fraction).round() as usize).clamp(1, subs.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Vec::with_capacity(protocol.splits);
    let mut redraws = 0;
    let mut streak = 0;
    while splits.len() < protocol.splits {
        let mut order = subs.clone();
        order.shuffle(&mut rng);
        let mut test_subjects = order[..n_test].to_vec();
        test_subjects.sort();
        let split = Split { test_subjects };
        if split_is_degenerate(records, &split) {
            redraws += 1;
            streak += 1;
            if streak > protocol.max_redraws {
                return Err(Error::Protocol(
                    "could not draw a split with both classes in training".into(),
                ));
            }
            continue;
        }
        streak = 0;
        splits.push(split);
    }
    Ok((splits, redraws))
}

/// Train on the split's training subjects and score its test subjects using
/// the features of variant slot `slot`.
pub fn evaluate_split(
    records: &[SampleRecord],
    slot: usize,
    split: &Split,
    svm: &SvmConfig,
    seed: u64,
) -> Result<Metrics> {
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut test = Vec::new();
    let mut train_ids = BTreeSet::new();
    for r in records {
        let Some(f) = r.features[slot] else { continue };
        if split.is_test(&r.subject_id) {
            test.push((r.id.as_str(), f, r.label));
        } else {
            train_x.push(f.to_array().to_vec());
            train_y.push(r.label);
            train_ids.insert(r.id.as_str());
        }
    }
    if let Some((id, _, _)) = test.iter().find(|(id, _, _)| train_ids.contains(id)) {
        return Err(Error::Protocol(format!(
            "sample {id} is in both training and test sets"
        )));
    }
    if test.is_empty() {
        return Err(Error::Protocol("split has no usable test sample".into()));
    }
    let model = train_svm(&train_x, &train_y, svm, seed)?;
    let mut preds = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for (_, f, label) in &test {
        preds.push(model.predict(&f.to_array())?.label);
        truth.push(*label);
    }
    evaluate(&preds, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub per_split: Vec<Metrics>,
    pub summary: MetricSummary,
}

pub fn run_protocol(
    records: &[SampleRecord],
    slot: usize,
    splits: &[Split],
    svm: &SvmConfig,
    seed: u64,
) -> Result<ProtocolResult> {
    let per_split: Vec<Metrics> = splits
        .par_iter()
        .map(|s| evaluate_split(records, slot, s, svm, seed))
        .collect::<Result<_>>()?;
    let summary = MetricSummary::of(&per_split);
    Ok(ProtocolResult { per_split, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub extraction: String,
    pub processing: String,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSample {
    pub id: String,
    pub variant: Variant,
    pub error: String,
}

/// Objective traces of every graph smoothing run in a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GsaTraceSummary {
    pub runs: usize,
    pub accepted_steps: usize,
    /// Consecutive trace entries where the objective went up. Should be 0.
    pub increases: usize,
}

impl GsaTraceSummary {
    pub fn of(records: &[SampleRecord]) -> Self {
        let mut s = GsaTraceSummary {
            runs: 0,
            accepted_steps: 0,
            increases: 0,
        };
        for t in records.iter().flat_map(|r| r.gsa_traces.iter().flatten()) {
            s.runs += 1;
            s.accepted_steps += t.len().saturating_sub(1);
            s.increases += t.windows(2).filter(|w| w[1] > w[0]).count();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub subjects: usize,
    pub splits: usize,
    pub redraws: usize,
    pub failed_samples: Vec<FailedSample>,
    pub gsa: GsaTraceSummary,
    pub rows: Vec<ReportRow>,
}

impl BenchReport {
    pub fn row(&self, v: Variant) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.extraction == v.extraction_name() && r.processing == v.processing_name())
    }
}

/// Evaluate every variant in `variants` (matching the slots of `records`)
/// on the same splits.
pub fn run_variants(records: &[SampleRecord], variants: &[Variant], base: &PipelineConfig) -> Result<BenchReport> {
    let (splits, redraws) = draw_splits(records, &base.protocol, base.seed)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (slot, v) in variants.iter().enumerate() {
        let r = run_protocol(records, slot, &splits, &base.svm, base.seed)?;
        rows.push(ReportRow {
            extraction: v.extraction_name().into(),
            processing: v.processing_name().into(),
            accuracy: r.summary.accuracy,
            precision: r.summary.precision,
            recall: r.summary.recall,
            f1: r.summary.f1,
        });
    }
    let mut failed_samples = Vec::new();
    for r in records {
        for (slot, e) in r.errors.iter().enumerate() {
            if let Some(e) = e {
                failed_samples.push(FailedSample {
                    id: r.id.clone(),
                    variant: variants[slot],
                    error: e.clone(),
                });
            }
        }
    }
    Ok(BenchReport {
        config_hash: base.hash(),
        seed: base.seed,
        samples: records.len(),
        subjects: subjects(records).len(),
        splits: splits.len(),
        redraws,
        failed_samples,
        gsa: GsaTraceSummary::of(records),
        rows,
    })
}

/// Full four-variant ablation over `n` samples.
pub fn run_ablation<F>(n: usize, load: F, base: &PipelineConfig) -> Result<BenchReport>
where
    F: Fn(usize) -> Result<DepthSample> + Sync,
{
    let records = featurize(n, load, base, &Variant::ALL)?;
    run_variants(&records, &Variant::ALL, base)
}

/// The configured pipeline alone.
pub fn run_bench<F>(n: usize, load: F, base: &PipelineConfig) -> Result<BenchReport>
where
    F: Fn(usize) -> Result<DepthSample> + Sync,
{
    let v = [Variant::of(base)];
    let records = featurize(n, load, base, &v)?;
    run_variants(&records, &v, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, subject: &str, label: Label, x: f64) -> SampleRecord {
        let mut a = [0.0; 15];
        a[2] = x;
        a[3] = 2.0 * x;
        SampleRecord {
            id: id.into(),
            subject_id: subject.into(),
            label,
            features: vec![Some(FeatureVector::from_array(a))],
            errors: vec![None],
            gsa_traces: vec![None],
        }
    }

    fn toy_records() -> Vec<SampleRecord> {
        let mut v = Vec::new();
        for s in 0..6 {
            let subj = format!("s{s}");
            v.push(record(&format!("{subj}_n"), &subj, Label::Normal, 1.0 + 0.1 * s as f64));
            v.push(record(&format!("{subj}_d"), &subj, Label::Deep, 3.0 + 0.1 * s as f64));
        }
        v
    }

    #[test]
    fn splits_are_subject_disjoint_and_reproducible() {
        let recs = toy_records();
        let p = ProtocolConfig {
            splits: 20,
            ..ProtocolConfig::default()
        };
        let (a, _) = draw_splits(&recs, &p, 3).unwrap();
        let (b, _) = draw_splits(&recs, &p, 3).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.test_subjects.len(), 2);
        }
    }

    #[test]
    fn separable_split_is_perfect() {
        let recs = toy_records();
        let split = Split {
            test_subjects: vec!["s1".into(), "s4".into()],
        };
        let m = evaluate_split(&recs, 0, &split, &SvmConfig::default(), 0).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn leaked_sample_is_rejected() {
        let mut recs = toy_records();
        // same sample id under two subjects
        recs.push(record("s1_n", "s2", Label::Normal, 1.0));
        let split = Split {
            test_subjects: vec!["s1".into()],
        };
        let err = evaluate_split(&recs, 0, &split, &SvmConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn single_subject_rejected() {
        let recs = vec![
            record("a", "s0", Label::Normal, 1.0),
            record("b", "s0", Label::Deep, 2.0),
        ];
        assert!(draw_splits(&recs, &ProtocolConfig::default(), 0).is_err());
    }
}
