//! Report tables. Every stage writes a human-readable CSV with fixed rounding
//! per column and a JSON file with raw values. Emitters are pure
//! functions of their input.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use crate::concept_activation::{ClassifierKind, ConceptAccuracy, MethodComparison};
use crate::error::Result;
use crate::hierarchy::ClassHierarchy;
use crate::induction::ScoredHypothesis;
use crate::io::{write_csv, write_json};
use crate::knowledge_base::{canonical_label, KnowledgeBase};
use crate::neuron_analysis::{ConfirmationRecord, EvaluationRecord, NeuronLabelRecord};
use crate::statistics::{format_p, Describe, RelevanceBins};

/// Header plus formatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.header, &self.rows)
    }
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn emit<T: Serialize + ?Sized>(dir: &Path, stem: &str, table: &Table, machine: &T) -> Result<()> {
    table.write(&dir.join(format!("{stem}.csv")))?;
    write_json(machine, &dir.join(format!("{stem}.json")))
}

fn opt3(v: Option<f64>) -> String {
    v.map(|c| format!("{c:.3}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelRow {
    pub neuron: usize,
    pub rank: usize,
    pub label: String,
    pub coverage: f64,
    pub z1: usize,
    pub z2: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelReport {
    pub skipped_neurons: Vec<usize>,
    pub labels: Vec<LabelRow>,
}

pub fn label_report(records: &[NeuronLabelRecord], kb: &KnowledgeBase) -> LabelReport {
    let h = kb.hierarchy();
    let mut labels = Vec::new();
    for r in records {
        for (i, s) in r.hypotheses.iter().enumerate() {
            labels.push(LabelRow {
                neuron: r.neuron,
                rank: i + 1,
                label: s.expression.label(h),
                coverage: s.coverage,
                z1: s.z1_count,
                z2: s.z2_count,
                positives: r.positives,
                negatives: r.negatives,
            });
        }
    }
    LabelReport {
        skipped_neurons: records.iter().filter(|r| r.skipped).map(|r| r.neuron).collect(),
        labels,
    }
}

pub fn label_table(report: &LabelReport) -> Table {
    Table {
        header: vec!["neuron", "rank", "label", "coverage", "positives", "negatives"],
        rows: report
            .labels
            .iter()
            .map(|r| {
                vec![
                    r.neuron.to_string(),
                    r.rank.to_string(),
                    r.label.clone(),
                    format!("{:.3}", r.coverage),
                    r.positives.to_string(),
                    r.negatives.to_string(),
                ]
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisRow {
    pub rank: usize,
    pub label: String,
    pub coverage: f64,
    pub z1: usize,
    pub z2: usize,
}

pub fn hypothesis_rows(hyps: &[ScoredHypothesis], h: &ClassHierarchy) -> Vec<HypothesisRow> {
    hyps.iter()
        .enumerate()
        .map(|(i, s)| HypothesisRow {
            rank: i + 1,
            label: s.expression.label(h),
            coverage: s.coverage,
            z1: s.z1_count,
            z2: s.z2_count,
        })
        .collect()
}

pub fn hypothesis_table(rows: &[HypothesisRow]) -> Table {
    Table {
        header: vec!["rank", "label", "coverage", "z1", "z2"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.rank.to_string(),
                    r.label.clone(),
                    format!("{:.3}", r.coverage),
                    r.z1.to_string(),
                    r.z2.to_string(),
                ]
            })
            .collect(),
    }
}

/// Neuron, label, images, coverage, Target %, Non-Target %, confirmed.
pub fn confirmation_table(records: &[ConfirmationRecord]) -> Table {
    Table {
        header: vec![
            "neuron",
            "label",
            "images",
            "coverage",
            "target_pct",
            "non_target_pct",
            "confirmed",
        ],
        rows: records
            .iter()
            .map(|r| {
                vec![
                    r.neuron.to_string(),
                    r.label.clone(),
                    r.image_count.to_string(),
                    opt3(r.coverage),
                    format!("{:.3}", r.target_pct),
                    format!("{:.3}", r.non_target_pct),
                    r.confirmed.to_string(),
                ]
            })
            .collect(),
    }
}

/// Neuron, label, images, activation % (target / non-target), means, medians,
/// z and one-sided p.
pub fn evaluation_table(records: &[EvaluationRecord]) -> Table {
    Table {
        header: vec![
            "neuron",
            "label",
            "images",
            "target_pct",
            "non_target_pct",
            "target_mean",
            "non_target_mean",
            "target_median",
            "non_target_median",
            "z",
            "p",
        ],
        rows: records
            .iter()
            .map(|r| {
                vec![
                    r.neuron.to_string(),
                    r.label.clone(),
                    r.image_count.to_string(),
                    format!("{:.2}", r.target.activation_pct),
                    format!("{:.2}", r.non_target.activation_pct),
                    format!("{:.2}", r.target.mean),
                    format!("{:.2}", r.non_target.mean),
                    format!("{:.2}", r.target.median),
                    format!("{:.2}", r.non_target.median),
                    format!("{:.2}", r.mwu.z_score),
                    format_p(r.mwu.p_one_sided),
                ]
            })
            .collect(),
    }
}

pub fn concept_accuracy_table(rows: &[ConceptAccuracy]) -> Table {
    Table {
        header: vec!["concept", "method", "train_accuracy", "test_accuracy", "p"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.concept.clone(),
                    r.method.to_string(),
                    format!("{:.4}", r.train_accuracy),
                    format!("{:.4}", r.test_accuracy),
                    r.p_value.map(format_p).unwrap_or_default(),
                ]
            })
            .collect(),
    }
}

/// One pairwise comparison per classifier kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub a: String,
    pub b: String,
    pub cav: MethodComparison,
    pub car: MethodComparison,
}

/// Method pair, then z and two-sided p for CAV and CAR.
pub fn comparison_table(rows: &[ComparisonRow]) -> Table {
    Table {
        header: vec!["methods", "cav_z", "cav_p", "car_z", "car_p"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    format!("{} x {}", r.a, r.b),
                    format!("{:.4}", r.cav.mwu.z_score),
                    format!("{:.4}", r.cav.mwu.p_two_sided),
                    format!("{:.4}", r.car.mwu.z_score),
                    format!("{:.4}", r.car.mwu.p_two_sided),
                ]
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub method: String,
    pub cav: Describe,
    pub car: Describe,
}

/// Mean, median and standard deviation of test accuracy per method.
pub fn summary_table(rows: &[AccuracySummary]) -> Table {
    let cells = |d: &Describe| {
        [
            format!("{:.4}", d.mean),
            format!("{:.4}", d.median),
            format!("{:.4}", d.std_dev),
        ]
    };
    Table {
        header: vec![
            "method",
            "cav_mean",
            "cav_median",
            "cav_std",
            "car_mean",
            "car_median",
            "car_std",
        ],
        rows: rows
            .iter()
            .map(|r| {
                let mut row = vec![r.method.clone()];
                row.extend(cells(&r.cav));
                row.extend(cells(&r.car));
                row
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BinRow {
    pub method: String,
    pub bins: RelevanceBins,
}

pub fn bin_table(rows: &[BinRow]) -> Table {
    Table {
        header: vec!["method", "high", "medium", "low"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.bins.high.to_string(),
                    r.bins.medium.to_string(),
                    r.bins.low.to_string(),
                ]
            })
            .collect(),
    }
}

/// Test accuracies of one method and classifier kind, in input order.
pub fn test_accuracies(rows: &[ConceptAccuracy], kind: ClassifierKind) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.method == kind)
        .map(|r| r.test_accuracy)
        .collect()
}

/// Number of distinct labels after normalization.
pub fn unique_concepts<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> usize {
    labels.into_iter().map(canonical_label).collect::<BTreeSet<_>>().len()
}
