//! Per-neuron example selection, labeling, confirmation and evaluation.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::induction::{induce, ExampleSets, InductionConfig, ScoredHypothesis};
use crate::knowledge_base::{canonical_label, ImageId, KnowledgeBase};
use crate::statistics::{mann_whitney_u, summarize, GroupSummary, MwuResult};

/// Images × neurons grid of non-negative activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    images: IndexSet<String>,
    neuron_count: usize,
    /// Row-major, `images.len() * neuron_count` values.
    values: Vec<f64>,
    per_neuron_max: Vec<f64>,
}

impl ActivationMatrix {
    pub fn new(images: Vec<String>, neuron_count: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != images.len() * neuron_count {
            return Err(Error::InvalidData(format!(
                "{} values for {} images x {neuron_count} neurons",
                values.len(),
                images.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData(format!(
                "activation {} at image `{}`, neuron {} is not a finite non-negative number",
                values[i],
                images[i / neuron_count],
                i % neuron_count
            )));
        }
        let mut set = IndexSet::with_capacity(images.len());
        for name in images {
            if set.contains(&name) {
                return Err(Error::DuplicateImage(name));
            }
            set.insert(name);
        }
        let mut per_neuron_max = vec![0.0f64; neuron_count];
        for row in values.chunks_exact(neuron_count.max(1)) {
            for (m, &v) in per_neuron_max.iter_mut().zip(row) {
                *m = m.max(v);
            }
        }
        Ok(ActivationMatrix {
            images: set,
            neuron_count,
            values,
            per_neuron_max,
        })
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn neuron_count(&self) -> usize {
        self.neuron_count
    }

    pub fn image_names(&self) -> impl ExactSizeIterator<Item = &str> {
        self.images.iter().map(String::as_str)
    }

    pub fn image_name(&self, row: usize) -> &str {
        &self.images[row]
    }

    pub fn row_of(&self, image: &str) -> Option<usize> {
        self.images.get_index_of(image)
    }

    pub fn rows_of<'a, I: IntoIterator<Item = &'a str>>(&self, images: I) -> Result<Vec<usize>> {
        images
            .into_iter()
            .map(|n| self.row_of(n).ok_or_else(|| Error::UnknownImage(n.to_string())))
            .collect()
    }

    #[inline]
    pub fn value(&self, row: usize, neuron: usize) -> f64 {
        self.values[row * self.neuron_count + neuron]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.neuron_count..(row + 1) * self.neuron_count]
    }

    pub fn per_neuron_max(&self) -> &[f64] {
        &self.per_neuron_max
    }

    fn check_neuron(&self, neuron: usize) -> Result<()> {
        if neuron < self.neuron_count {
            Ok(())
        } else {
            Err(Error::InvalidData(format!(
                "neuron {neuron} out of range (matrix has {})",
                self.neuron_count
            )))
        }
    }

    /// Resolves every row to its image in `kb`.
    pub fn resolve(&self, kb: &KnowledgeBase) -> Result<Vec<ImageId>> {
        self.images
            .iter()
            .map(|n| kb.image_id(n).ok_or_else(|| Error::UnknownImage(n.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Positives activate with at least this fraction of the neuron maximum.
    pub hi_fraction: f64,
    /// Negatives activate with at most this fraction of the neuron maximum.
    pub lo_fraction: f64,
    /// Share of target images that must activate for a label to be confirmed.
    pub confirm_fraction: f64,
    /// An image "activates" a neuron at this fraction of its maximum.
    pub activate_fraction: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            hi_fraction: 0.8,
            lo_fraction: 0.2,
            confirm_fraction: 0.8,
            activate_fraction: 0.8,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lo_fraction > 0.0
            && self.lo_fraction < self.hi_fraction
            && self.hi_fraction <= 1.0
            && self.confirm_fraction > 0.0
            && self.confirm_fraction <= 1.0
            && self.activate_fraction > 0.0
            && self.activate_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "thresholds need 0 < lo < hi <= 1 and confirm/activate in (0, 1]: {self:?}"
            )))
        }
    }
}

/// Row indices of the positive and negative examples for a neuron, or `None`
/// when the neuron never activates.
pub fn example_rows(
    m: &ActivationMatrix,
    neuron: usize,
    t: &ThresholdConfig,
) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
    m.check_neuron(neuron)?;
    let max = m.per_neuron_max[neuron];
    if max <= 0.0 {
        return Ok(None);
    }
    let hi = t.hi_fraction * max;
    let lo = t.lo_fraction * max;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for row in 0..m.image_count() {
        let v = m.value(row, neuron);
        if v >= hi {
            pos.push(row);
        } else if v <= lo {
            neg.push(row);
        }
    }
    Ok(Some((pos, neg)))
}

/// Positive and negative example images for a neuron; `None` means skip it.
pub fn example_sets(
    m: &ActivationMatrix,
    kb: &KnowledgeBase,
    neuron: usize,
    t: &ThresholdConfig,
) -> Result<Option<ExampleSets>> {
    let images = m.resolve(kb)?;
    example_sets_resolved(m, &images, neuron, t)
}

fn example_sets_resolved(
    m: &ActivationMatrix,
    images: &[ImageId],
    neuron: usize,
    t: &ThresholdConfig,
) -> Result<Option<ExampleSets>> {
    let Some((pos, neg)) = example_rows(m, neuron, t)? else {
        return Ok(None);
    };
    let ex = ExampleSets::new(
        pos.into_iter().map(|r| images[r]).collect(),
        neg.into_iter().map(|r| images[r]).collect(),
    )?;
    Ok(Some(ex))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronLabelRecord {
    pub neuron: usize,
    /// Ranked hypotheses; the first is the neuron's target label.
    pub hypotheses: Vec<ScoredHypothesis>,
    /// The neuron's maximum is 0.
    pub skipped: bool,
    /// Maximum activation over the labeling pool, reused during confirmation.
    pub max_activation: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl NeuronLabelRecord {
    pub fn top(&self) -> Option<&ScoredHypothesis> {
        self.hypotheses.first()
    }
}

/// Runs induction for every neuron. Output is ordered by neuron index and does
/// not depend on the thread count.
pub fn label_neurons(
    m: &ActivationMatrix,
    kb: &KnowledgeBase,
    t: &ThresholdConfig,
    cfg: &InductionConfig,
) -> Result<Vec<NeuronLabelRecord>> {
    t.validate()?;
    cfg.validate()?;
    let images = m.resolve(kb)?;
    (0..m.neuron_count())
        .into_par_iter()
        .map(|neuron| {
            let max_activation = m.per_neuron_max[neuron];
            match example_sets_resolved(m, &images, neuron, t)? {
                None => Ok(NeuronLabelRecord {
                    neuron,
                    hypotheses: Vec::new(),
                    skipped: true,
                    max_activation,
                    positives: 0,
                    negatives: 0,
                }),
                Some(ex) => Ok(NeuronLabelRecord {
                    neuron,
                    hypotheses: induce(kb, &ex, cfg)?,
                    skipped: false,
                    max_activation,
                    positives: ex.positives().len(),
                    negatives: ex.negatives().len(),
                }),
            }
        })
        .collect()
}

/// Percentage of `rows` whose activation reaches `activate_fraction · reference_max`.
pub fn activation_rate(
    m: &ActivationMatrix,
    neuron: usize,
    rows: &[usize],
    reference_max: f64,
    t: &ThresholdConfig,
) -> Result<f64> {
    m.check_neuron(neuron)?;
    if rows.is_empty() {
        return Err(Error::EmptySample("activation rate"));
    }
    if reference_max <= 0.0 {
        return Err(Error::InvalidData(format!("neuron {neuron} has maximum activation 0")));
    }
    let threshold = t.activate_fraction * reference_max;
    let hits = rows.iter().filter(|&&r| m.value(r, neuron) >= threshold).count();
    Ok(100.0 * hits as f64 / rows.len() as f64)
}

/// A neuron's label as it enters confirmation, from induction or an external source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetLabel {
    pub neuron: usize,
    /// Canonical label text (see [`canonical_label`]).
    pub label: String,
    /// Neuron maximum over the labeling pool.
    pub max_activation: f64,
    pub coverage: Option<f64>,
}

/// Top-1 labels of every non-skipped record.
pub fn target_labels(records: &[NeuronLabelRecord], kb: &KnowledgeBase) -> Vec<TargetLabel> {
    records
        .iter()
        .filter(|r| !r.skipped)
        .filter_map(|r| {
            r.top().map(|top| TargetLabel {
                neuron: r.neuron,
                label: top.expression.label(kb.hierarchy()),
                max_activation: r.max_activation,
                coverage: Some(top.coverage),
            })
        })
        .collect()
}

/// Label -> image names. Keys are canonicalized on insertion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSetManifest(BTreeMap<String, Vec<String>>);

impl ImageSetManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: &str, images: Vec<String>) {
        self.0.entry(canonical_label(label)).or_default().extend(images);
    }

    pub fn get(&self, label: &str) -> Option<&[String]> {
        self.0.get(&canonical_label(label)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Images of every label other than `label`, without images of `label` itself.
    fn pool_excluding(&self, label: &str) -> Vec<&str> {
        let key = canonical_label(label);
        let own: BTreeSet<&str> = self
            .0
            .get(&key)
            .map(|v| v.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let pool: BTreeSet<&str> = self
            .0
            .iter()
            .filter(|(k, _)| **k != key)
            .flat_map(|(_, v)| v.iter().map(String::as_str))
            .filter(|n| !own.contains(n))
            .collect();
        pool.into_iter().collect()
    }

    /// Splits every label's images into a leading `fraction` and the rest,
    /// after a seeded shuffle of each list.
    pub fn split(&self, fraction: f64, seed: u64) -> (ImageSetManifest, ImageSetManifest) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (i, (label, images)) in self.0.iter().enumerate() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut shuffled = images.clone();
            shuffled.shuffle(&mut rng);
            let cut = ((shuffled.len() as f64) * fraction + 1e-9).floor() as usize;
            let rest = shuffled.split_off(cut.min(shuffled.len()));
            first.insert(label.clone(), shuffled);
            second.insert(label.clone(), rest);
        }
        (ImageSetManifest(first), ImageSetManifest(second))
    }
}

impl FromIterator<(String, Vec<String>)> for ImageSetManifest {
    fn from_iter<I: IntoIterator<Item = (String, Vec<String>)>>(iter: I) -> Self {
        let mut m = ImageSetManifest::new();
        for (k, v) in iter {
            m.insert(&k, v);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfirmationRecord {
    pub neuron: usize,
    pub label: String,
    pub coverage: Option<f64>,
    /// Number of target images.
    pub image_count: usize,
    pub target_pct: f64,
    pub non_target_pct: f64,
    pub confirmed: bool,
}

/// Checks each label against the images retrieved for it.
pub fn confirm_labels(
    m: &ActivationMatrix,
    labels: &[TargetLabel],
    manifest: &ImageSetManifest,
    t: &ThresholdConfig,
) -> Result<Vec<ConfirmationRecord>> {
    t.validate()?;
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        if l.max_activation <= 0.0 {
            continue;
        }
        let targets = manifest.get(&l.label).ok_or_else(|| Error::MissingManifestEntry {
            neuron: l.neuron,
            label: l.label.clone(),
        })?;
        let target_rows = m.rows_of(targets.iter().map(String::as_str))?;
        let pool_rows = m.rows_of(manifest.pool_excluding(&l.label))?;
        let target_pct = activation_rate(m, l.neuron, &target_rows, l.max_activation, t)?;
        let non_target_pct = if pool_rows.is_empty() {
            0.0
        } else {
            activation_rate(m, l.neuron, &pool_rows, l.max_activation, t)?
        };
        out.push(ConfirmationRecord {
            neuron: l.neuron,
            label: canonical_label(&l.label),
            coverage: l.coverage,
            image_count: target_rows.len(),
            target_pct,
            non_target_pct,
            confirmed: target_pct >= 100.0 * t.confirm_fraction,
        });
    }
    out.sort_by_key(|r| r.neuron);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub neuron: usize,
    pub label: String,
    /// Number of target images used in the evaluation.
    pub image_count: usize,
    pub target: GroupSummary,
    pub non_target: GroupSummary,
    pub mwu: MwuResult,
}

/// Mann-Whitney comparison of target vs non-target activations for each label.
pub fn evaluate_labels(
    m: &ActivationMatrix,
    labels: &[TargetLabel],
    manifest: &ImageSetManifest,
    t: &ThresholdConfig,
) -> Result<Vec<EvaluationRecord>> {
    t.validate()?;
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        let targets = manifest.get(&l.label).ok_or_else(|| Error::MissingManifestEntry {
            neuron: l.neuron,
            label: l.label.clone(),
        })?;
        m.check_neuron(l.neuron)?;
        let target_rows = m.rows_of(targets.iter().map(String::as_str))?;
        let pool_rows = m.rows_of(manifest.pool_excluding(&l.label))?;
        let column = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&r| m.value(r, l.neuron)).collect() };
        let tv = column(&target_rows);
        let nv = column(&pool_rows);
        let threshold = t.activate_fraction * l.max_activation;
        out.push(EvaluationRecord {
            neuron: l.neuron,
            label: canonical_label(&l.label),
            image_count: tv.len(),
            target: summarize(&tv, threshold)?,
            non_target: summarize(&nv, threshold)?,
            mwu: mann_whitney_u(&tv, &nv)?,
        });
    }
    out.sort_by_key(|r| r.neuron);
    Ok(out)
}
