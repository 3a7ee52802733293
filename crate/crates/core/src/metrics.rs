//! Binary classification metrics with `deep` as the positive class, and
//! mean/std aggregation over repeated splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Metrics whose denominator was zero and were reported as 0.
    pub undefined: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(preds: &[Label], labels: &[Label]) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::parameter(
            "predictions",
            format!("{} predictions for {} labels", preds.len(), labels.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::parameter("predictions", "nothing to evaluate"));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (p, l) in preds.iter().zip(labels) {
        match (p, l) {
            (Label::Deep, Label::Deep) => c.tp += 1,
            (Label::Deep, Label::Normal) => c.fp += 1,
            (Label::Normal, Label::Deep) => c.fn_ += 1,
            (Label::Normal, Label::Normal) => c.tn += 1,
        }
    }
    let mut undefined = Vec::new();
    let accuracy = (c.tp + c.tn) as f64 / preds.len() as f64;
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, "f1", &mut undefined);
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        confusion: c,
        undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

impl MetricSummary {
    pub fn of(runs: &[Metrics]) -> MetricSummary {
        let pick = |f: fn(&Metrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        MetricSummary {
            accuracy: pick(|m| m.accuracy),
            precision: pick(|m| m.precision),
            recall: pick(|m| m.recall),
            f1: pick(|m| m.f1),
        }
    }
}
