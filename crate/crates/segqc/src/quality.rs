//! Grading segmentations without ground truth: how well do the
//! agreement metrics stand in for accuracy against a reference?
//! Evaluation records pair each structure's metrics with its Dice
//! against truth; correlations, proxy error and class agreement are
//! computed over those pairs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{compute_all_structure_metrics, StructureMetrics};
use crate::volume::{dice, LabelVolume, McSampleSet};

/// Quality bands on the Dice scale: [0, 0.6) bad, [0.6, 0.8) medium,
/// [0.8, 1.0] good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityClass {
    Bad,
    Medium,
    Good,
}

impl fmt::Display for QualityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualityClass::Bad => "bad",
            QualityClass::Medium => "medium",
            QualityClass::Good => "good",
        })
    }
}

/// Bands a Dice-scale score. Boundary values go up: 0.6 is medium,
/// 0.8 is good.
pub fn classify(score: f64) -> Result<QualityClass> {
    if !score.is_finite() || !(0.0..=1.0).contains(&score) {
        return Err(Error::OutOfRange(score));
    }
    Ok(if score < 0.6 {
        QualityClass::Bad
    } else if score < 0.8 {
        QualityClass::Medium
    } else {
        QualityClass::Good
    })
}

/// One structure of one subject: agreement metrics next to the Dice
/// against a reference segmentation (`None` when the structure is
/// absent from both).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub subject_id: String,
    pub structure: u16,
    pub dice_vs_truth: Option<f64>,
    pub metrics: StructureMetrics,
}

/// Builds the evaluation rows for one subject: every structure's
/// agreement metrics paired with the final segmentation's Dice
/// against the reference labels.
pub fn eval_records(
    samples: &McSampleSet,
    final_seg: &LabelVolume,
    truth: &LabelVolume,
) -> Result<Vec<EvalRecord>> {
    compute_all_structure_metrics(samples, Some(final_seg))?
        .into_iter()
        .map(|m| {
            let d = dice(final_seg, truth, m.structure)?;
            Ok(EvalRecord {
                subject_id: samples.subject_id().to_string(),
                structure: m.structure,
                dice_vs_truth: d,
                metrics: m,
            })
        })
        .collect()
}

/// Which agreement metric to correlate against accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Cv,
    Dmc,
    Iou,
    MeanEntropy,
}

impl MetricKind {
    pub fn all() -> [MetricKind; 4] {
        [
            MetricKind::Cv,
            MetricKind::Dmc,
            MetricKind::Iou,
            MetricKind::MeanEntropy,
        ]
    }

    pub fn pick(&self, m: &StructureMetrics) -> Option<f64> {
        match self {
            MetricKind::Cv => m.cv,
            MetricKind::Dmc => m.dmc,
            MetricKind::Iou => m.iou,
            MetricKind::MeanEntropy => m.mean_entropy,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Cv => "cv",
            MetricKind::Dmc => "dmc",
            MetricKind::Iou => "iou",
            MetricKind::MeanEntropy => "mean_entropy",
        })
    }
}

/// Pearson correlation. Errors on length mismatch, fewer than two
/// points, or zero variance on either side.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DegenerateInput(format!(
            "pearson over {} vs {} points",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(
            "pearson needs at least two points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput(
            "pearson over a constant sequence".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Correlation between one agreement metric and Dice-vs-truth across
/// records. Records missing either value are dropped; the remainder
/// must still be non-degenerate.
pub fn correlation_report(records: &[EvalRecord], kind: MetricKind) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        if let (Some(m), Some(d)) = (kind.pick(&r.metrics), r.dice_vs_truth) {
            xs.push(m);
            ys.push(d);
        }
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    pearson(&xs, &ys)
}

/// Mean absolute error of IoU as a direct stand-in for Dice, over
/// records where both are present.
pub fn iou_proxy_mae(records: &[EvalRecord]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in records {
        if let (Some(iou), Some(d)) = (r.metrics.iou, r.dice_vs_truth) {
            sum += (iou - d).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(sum / n as f64)
}

/// Fraction of records where the IoU-predicted quality band matches
/// the band of the true Dice.
pub fn proxy_accuracy(records: &[EvalRecord]) -> Result<f64> {
    let mut hits = 0usize;
    let mut n = 0usize;
    for r in records {
        if let (Some(iou), Some(d)) = (r.metrics.iou, r.dice_vs_truth) {
            hits += (classify(iou)? == classify(d)?) as usize;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(hits as f64 / n as f64)
}
