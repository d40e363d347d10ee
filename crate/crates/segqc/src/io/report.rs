//! Metric and evaluation reports. JSON is the machine format (missing
//! values are `null`); CSV mirrors it with empty cells for missing
//! values. Floats are written with Rust's shortest round-trip
//! formatting, so equal inputs produce byte-identical reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{classify, EvalRecord, QualityClass};
use crate::uncertainty::{compute_all_structure_metrics, StructureMetrics};
use crate::volume::{LabelVolume, McSampleSet};

/// One structure of one subject in a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub subject_id: String,
    pub structure: u16,
    pub cv: Option<f64>,
    pub dmc: Option<f64>,
    pub iou: Option<f64>,
    pub mean_entropy: Option<f64>,
    /// Mean structure volume over samples divided by the mean
    /// foreground volume; `None` when every sample is background.
    pub volume_fraction: Option<f64>,
    /// IoU banded onto the quality scale; `None` when IoU is missing.
    pub quality_class: Option<QualityClass>,
}

impl MetricsRecord {
    pub fn metrics(&self) -> StructureMetrics {
        StructureMetrics {
            structure: self.structure,
            cv: self.cv,
            dmc: self.dmc,
            iou: self.iou,
            mean_entropy: self.mean_entropy,
            mean_volume: 0.0,
            volume_std: 0.0,
        }
    }
}

/// Builds the per-structure report rows for one subject.
pub fn metrics_records(
    subject_id: &str,
    samples: &McSampleSet,
    final_seg: Option<&LabelVolume>,
) -> Result<Vec<MetricsRecord>> {
    let all = compute_all_structure_metrics(samples, final_seg)?;
    let mean_foreground: f64 = all.iter().map(|m| m.mean_volume).sum();
    Ok(all
        .into_iter()
        .map(|m| {
            let volume_fraction = if mean_foreground > 0.0 {
                Some(m.mean_volume / mean_foreground)
            } else {
                None
            };
            // IoU is in [0, 1] whenever present, so classify cannot fail.
            let quality_class = m.iou.map(|iou| classify(iou).expect("iou in range"));
            MetricsRecord {
                subject_id: subject_id.to_string(),
                structure: m.structure,
                cv: m.cv,
                dmc: m.dmc,
                iou: m.iou,
                mean_entropy: m.mean_entropy,
                volume_fraction,
                quality_class,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub records: Vec<MetricsRecord>,
}

impl MetricsTable {
    pub fn new(records: Vec<MetricsRecord>) -> Self {
        MetricsTable { records }
    }

    pub fn get(&self, subject_id: &str, structure: u16) -> Option<&MetricsRecord> {
        self.records
            .iter()
            .find(|r| r.subject_id == subject_id && r.structure == structure)
    }

    /// (subject_id → record) map for one structure.
    pub fn by_subject(&self, structure: u16) -> HashMap<&str, &MetricsRecord> {
        self.records
            .iter()
            .filter(|r| r.structure == structure)
            .map(|r| (r.subject_id.as_str(), r))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.records).expect("records serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<MetricsRecord> = serde_json::from_str(text)
            .map_err(|e| Error::DegenerateInput(format!("metrics JSON: {e}")))?;
        Ok(MetricsTable { records })
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("subject_id,structure,cv,dmc,iou,mean_entropy,volume_fraction,quality_class\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.subject_id,
                r.structure,
                fmt_opt(r.cv),
                fmt_opt(r.dmc),
                fmt_opt(r.iou),
                fmt_opt(r.mean_entropy),
                fmt_opt(r.volume_fraction),
                r.quality_class.map(|q| q.to_string()).unwrap_or_default(),
            ));
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Evaluation rows (metrics next to Dice-vs-truth) as JSON.
pub fn eval_to_json(records: &[EvalRecord]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("records serialize");
    s.push('\n');
    s
}

pub fn eval_from_json(text: &str) -> Result<Vec<EvalRecord>> {
    serde_json::from_str(text).map_err(|e| Error::DegenerateInput(format!("eval JSON: {e}")))
}

/// Flat CSV of evaluation rows; `dice_class`/`iou_class` give the
/// quality band of each side where defined.
pub fn eval_to_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from(
        "subject_id,structure,dice,dice_class,cv,dmc,iou,mean_entropy,iou_class\n",
    );
    for r in records {
        let band = |v: Option<f64>| {
            v.and_then(|v| classify(v).ok())
                .map(|q| q.to_string())
                .unwrap_or_default()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.subject_id,
            r.structure,
            fmt_opt(r.dice_vs_truth),
            band(r.dice_vs_truth),
            fmt_opt(r.metrics.cv),
            fmt_opt(r.metrics.dmc),
            fmt_opt(r.metrics.iou),
            fmt_opt(r.metrics.mean_entropy),
            band(r.metrics.iou),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{aggregate_mean_argmax, Dims, ProbStack};

    fn sample_set() -> McSampleSet {
        let d = Dims::new(4, 1, 1);
        let mk = |p: Vec<f32>| ProbStack::new(d, 2, p).unwrap();
        McSampleSet::from_prob_stacks(
            "subj_a",
            vec![
                mk(vec![0.9, 0.2, 0.1, 0.8, 0.1, 0.8, 0.9, 0.2]),
                mk(vec![0.8, 0.3, 0.4, 0.9, 0.2, 0.7, 0.6, 0.1]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn records_carry_fraction_and_class() {
        let set = sample_set();
        let seg = aggregate_mean_argmax(&set).unwrap();
        let recs = metrics_records("subj_a", &set, Some(&seg)).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.subject_id, "subj_a");
        assert_eq!(r.structure, 1);
        assert_eq!(r.volume_fraction, Some(1.0));
        assert!(r.quality_class.is_some());
        assert!(r.mean_entropy.is_some());
    }

    #[test]
    fn json_round_trip_preserves_missing() {
        let records = vec![MetricsRecord {
            subject_id: "s".into(),
            structure: 3,
            cv: Some(0.125),
            dmc: None,
            iou: Some(0.5),
            mean_entropy: None,
            volume_fraction: Some(0.25),
            quality_class: Some(QualityClass::Bad),
        }];
        let table = MetricsTable::new(records);
        let json = table.to_json();
        assert!(json.contains("\"dmc\": null"));
        assert!(json.contains("\"quality_class\": \"bad\""));
        let back = MetricsTable::from_json(&json).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn csv_leaves_missing_cells_empty() {
        let table = MetricsTable::new(vec![MetricsRecord {
            subject_id: "s".into(),
            structure: 2,
            cv: None,
            dmc: Some(0.75),
            iou: None,
            mean_entropy: None,
            volume_fraction: None,
            quality_class: None,
        }]);
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "subject_id,structure,cv,dmc,iou,mean_entropy,volume_fraction,quality_class"
        );
        assert_eq!(lines.next().unwrap(), "s,2,,0.75,,,,");
    }

    #[test]
    fn lookup_by_subject_and_structure() {
        let set = sample_set();
        let recs = metrics_records("subj_a", &set, None).unwrap();
        let table = MetricsTable::new(recs);
        assert!(table.get("subj_a", 1).is_some());
        assert!(table.get("subj_a", 2).is_none());
        assert!(table.get("other", 1).is_none());
        let by = table.by_subject(1);
        assert_eq!(by.len(), 1);
    }

    #[test]
    fn eval_serialization() {
        let records = vec![EvalRecord {
            subject_id: "s".into(),
            structure: 1,
            dice_vs_truth: Some(0.85),
            metrics: StructureMetrics {
                structure: 1,
                cv: Some(0.02),
                dmc: Some(0.9),
                iou: Some(0.82),
                mean_entropy: None,
                mean_volume: 120.0,
                volume_std: 4.0,
            },
        }];
        let json = eval_to_json(&records);
        assert_eq!(eval_from_json(&json).unwrap(), records);
        let csv = eval_to_csv(&records);
        assert!(csv.contains("s,1,0.85,good,0.02,0.9,0.82,,good"));
    }
}
