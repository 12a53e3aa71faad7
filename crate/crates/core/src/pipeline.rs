//! End-to-end run: label neurons, retrieve images per label, confirm on one
//! split of the retrieved images, evaluate confirmed labels on the other,
//! bin the results and train concept classifiers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::concept_activation::{
    analyze_concept, assemble_concept_manifest, ClassifierConfig, ClassifierKind, ConceptAccuracy, ConceptDataset,
};
use crate::error::{Error, Result};
use crate::induction::InductionConfig;
use crate::io::{write_activation_csv, write_image_manifest, write_json, write_labels_csv};
use crate::knowledge_base::{canonical_label, KnowledgeBase};
use crate::neuron_analysis::{
    confirm_labels, evaluate_labels, label_neurons, target_labels, ActivationMatrix, ConfirmationRecord,
    EvaluationRecord, ImageSetManifest, NeuronLabelRecord, TargetLabel, ThresholdConfig,
};
use crate::report::{
    bin_table, concept_accuracy_table, confirmation_table, emit, evaluation_table, label_report, label_table,
    summary_table, test_accuracies, AccuracySummary, BinRow, LabelReport,
};
use crate::statistics::{bin_relevance, describe};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub thresholds: ThresholdConfig,
    pub induction: InductionConfig,
    pub classifier: ClassifierConfig,
    /// Share of each label's retrieved images used for confirmation; the rest
    /// is held out for evaluation.
    pub split_fraction: f64,
    pub seed: u64,
    pub concept_analysis: bool,
    pub concept_p_values: bool,
    /// Name of the labeling method in reports.
    pub method: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            thresholds: ThresholdConfig::default(),
            induction: InductionConfig::default(),
            classifier: ClassifierConfig::default(),
            split_fraction: 0.8,
            seed: 0,
            concept_analysis: true,
            concept_p_values: false,
            method: "concept_induction".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.induction.validate()?;
        self.classifier.validate()?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

/// Images found for each label, with their activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub activations: ActivationMatrix,
    pub manifest: ImageSetManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub neurons: usize,
    pub skipped: usize,
    pub labeled: usize,
    pub unique_labels: usize,
    pub confirmed: usize,
    pub unique_confirmed: usize,
    /// Evaluated labels with one-sided p < 0.05.
    pub significant: usize,
    pub unique_significant: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub records: Vec<NeuronLabelRecord>,
    pub labels: LabelReport,
    pub targets: Vec<TargetLabel>,
    pub retrieved: Retrieved,
    pub confirm_manifest: ImageSetManifest,
    pub eval_manifest: ImageSetManifest,
    pub confirmations: Vec<ConfirmationRecord>,
    pub evaluations: Vec<EvaluationRecord>,
    pub bins: Option<BinRow>,
    pub concept_accuracies: Vec<ConceptAccuracy>,
    pub concept_summary: Option<AccuracySummary>,
    pub summary: RunSummary,
}

fn unique<'a>(labels: impl IntoIterator<Item = &'a str>) -> usize {
    labels.into_iter().map(canonical_label).collect::<BTreeSet<_>>().len()
}

/// Target labels for externally produced `neuron -> label` maps. The neuron
/// maximum is taken from `reference`, the labeling pool.
pub fn external_targets(labels: &BTreeMap<usize, String>, reference: &ActivationMatrix) -> Result<Vec<TargetLabel>> {
    labels
        .iter()
        .map(|(&neuron, label)| {
            let max_activation = *reference.per_neuron_max().get(neuron).ok_or_else(|| {
                Error::InvalidData(format!(
                    "neuron {neuron} out of range (matrix has {})",
                    reference.neuron_count()
                ))
            })?;
            Ok(TargetLabel {
                neuron,
                label: canonical_label(label),
                max_activation,
                coverage: None,
            })
        })
        .collect()
}

/// Manifest restricted to the given labels.
pub fn restrict_manifest<'a>(m: &ImageSetManifest, labels: impl IntoIterator<Item = &'a str>) -> ImageSetManifest {
    let keep: BTreeSet<String> = labels.into_iter().map(canonical_label).collect();
    m.iter()
        .filter(|(k, _)| keep.contains(*k))
        .map(|(k, v)| (k.to_string(), v.to_vec()))
        .collect()
}

/// Confirmed labels only.
pub fn confirmed_targets(targets: &[TargetLabel], confirmations: &[ConfirmationRecord]) -> Vec<TargetLabel> {
    let ok: BTreeSet<usize> = confirmations.iter().filter(|c| c.confirmed).map(|c| c.neuron).collect();
    targets.iter().filter(|t| ok.contains(&t.neuron)).cloned().collect()
}

/// Mann-Whitney evaluation; needs at least two distinct labels so that the
/// non-target pool is not empty.
pub fn evaluate_confirmed(
    m: &ActivationMatrix,
    confirmed: &[TargetLabel],
    eval_manifest: &ImageSetManifest,
    t: &ThresholdConfig,
) -> Result<Vec<EvaluationRecord>> {
    if unique(confirmed.iter().map(|c| c.label.as_str())) < 2 {
        return Ok(Vec::new());
    }
    evaluate_labels(m, confirmed, eval_manifest, t)
}

/// CAV and CAR accuracy for every concept in `images`, ordered by concept
/// then kind.
pub fn concept_analysis(
    m: &ActivationMatrix,
    images: &ImageSetManifest,
    cfg: &ClassifierConfig,
    with_p_values: bool,
) -> Result<Vec<ConceptAccuracy>> {
    let manifest = assemble_concept_manifest(images, cfg.seed);
    let jobs: Vec<(&String, ClassifierKind)> = manifest
        .keys()
        .flat_map(|c| [(c, ClassifierKind::Kernel), (c, ClassifierKind::Linear)])
        .collect();
    jobs.into_par_iter()
        .map(|(concept, kind)| {
            let entry = &manifest[concept];
            let ds = ConceptDataset::from_images(concept, m, &entry.positive, &entry.negative)?;
            analyze_concept(&ds, kind, cfg, with_p_values)
        })
        .collect()
}

pub fn accuracy_summary(method: &str, rows: &[ConceptAccuracy]) -> Result<Option<AccuracySummary>> {
    let cav = test_accuracies(rows, ClassifierKind::Linear);
    let car = test_accuracies(rows, ClassifierKind::Kernel);
    if cav.is_empty() || car.is_empty() {
        return Ok(None);
    }
    Ok(Some(AccuracySummary {
        method: method.to_string(),
        cav: describe(&cav)?,
        car: describe(&car)?,
    }))
}

/// Runs every stage. `retrieve` receives the distinct target labels.
pub fn run_pipeline<F>(
    kb: &KnowledgeBase,
    m: &ActivationMatrix,
    retrieve: F,
    cfg: &PipelineConfig,
) -> Result<PipelineResult>
where
    F: FnOnce(&[String]) -> Result<Retrieved>,
{
    cfg.validate()?;
    let t = &cfg.thresholds;
    let records = label_neurons(m, kb, t, &cfg.induction)?;
    let labels = label_report(&records, kb);
    let targets = target_labels(&records, kb);
    let distinct: Vec<String> = targets
        .iter()
        .map(|l| l.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let retrieved = retrieve(&distinct)?;
    let (confirm_manifest, eval_split) = retrieved.manifest.split(cfg.split_fraction, cfg.seed);
    let confirmations = confirm_labels(&retrieved.activations, &targets, &confirm_manifest, t)?;
    let confirmed = confirmed_targets(&targets, &confirmations);
    let eval_manifest = restrict_manifest(&eval_split, confirmed.iter().map(|c| c.label.as_str()));
    let evaluations = evaluate_confirmed(&retrieved.activations, &confirmed, &eval_manifest, t)?;
    let bins = if evaluations.is_empty() {
        None
    } else {
        let pct: Vec<f64> = evaluations.iter().map(|e| e.target.activation_pct).collect();
        Some(BinRow {
            method: cfg.method.clone(),
            bins: bin_relevance(&pct)?,
        })
    };
    let (concept_accuracies, concept_summary) = if cfg.concept_analysis && retrieved.manifest.len() >= 2 {
        let rows = concept_analysis(
            &retrieved.activations,
            &retrieved.manifest,
            &cfg.classifier,
            cfg.concept_p_values,
        )?;
        let summary = accuracy_summary(&cfg.method, &rows)?;
        (rows, summary)
    } else {
        (Vec::new(), None)
    };
    let significant: Vec<&EvaluationRecord> = evaluations.iter().filter(|e| e.mwu.p_one_sided < 0.05).collect();
    let summary = RunSummary {
        neurons: records.len(),
        skipped: records.iter().filter(|r| r.skipped).count(),
        labeled: targets.len(),
        unique_labels: distinct.len(),
        confirmed: confirmed.len(),
        unique_confirmed: unique(confirmed.iter().map(|c| c.label.as_str())),
        significant: significant.len(),
        unique_significant: unique(significant.iter().map(|e| e.label.as_str())),
    };
    Ok(PipelineResult {
        records,
        labels,
        targets,
        retrieved,
        confirm_manifest,
        eval_manifest,
        confirmations,
        evaluations,
        bins,
        concept_accuracies,
        concept_summary,
        summary,
    })
}

pub fn targets_map(targets: &[TargetLabel]) -> BTreeMap<usize, String> {
    targets.iter().map(|t| (t.neuron, t.label.clone())).collect()
}

impl PipelineResult {
    /// Writes every stage's tables into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        emit(dir, "labels", &label_table(&self.labels), &self.labels)?;
        write_labels_csv(&targets_map(&self.targets), &dir.join("target_labels.csv"))?;
        write_activation_csv(&self.retrieved.activations, &dir.join("retrieved_activations.csv"))?;
        write_image_manifest(&self.retrieved.manifest, &dir.join("retrieved_manifest.json"))?;
        write_image_manifest(&self.confirm_manifest, &dir.join("confirm_manifest.json"))?;
        write_image_manifest(&self.eval_manifest, &dir.join("eval_manifest.json"))?;
        emit(
            dir,
            "confirmation",
            &confirmation_table(&self.confirmations),
            &self.confirmations,
        )?;
        emit(
            dir,
            "evaluation",
            &evaluation_table(&self.evaluations),
            &self.evaluations,
        )?;
        let bins: Vec<BinRow> = self.bins.iter().cloned().collect();
        emit(dir, "bins", &bin_table(&bins), &bins)?;
        if !self.concept_accuracies.is_empty() {
            emit(
                dir,
                "concept_accuracy",
                &concept_accuracy_table(&self.concept_accuracies),
                &self.concept_accuracies,
            )?;
            let summary: Vec<AccuracySummary> = self.concept_summary.iter().cloned().collect();
            emit(dir, "concept_summary", &summary_table(&summary), &summary)?;
        }
        write_json(&self.summary, &dir.join("summary.json"))
    }
}
