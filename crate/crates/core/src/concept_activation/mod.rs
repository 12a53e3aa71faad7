//! Concept classifiers in hidden-layer activation space.
//!
//! A concept dataset pairs activation vectors with a present/absent label. A
//! linear SVM over it yields a concept activation vector (CAV); an RBF-kernel
//! SVM yields a concept activation region (CAR). Features are standardized
//! with statistics from the training rows only. The RBF width is
//! `γ = 1 / (d · mean per-dimension training variance)` measured after
//! standardization.

mod kfold;
mod solver;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron_analysis::{ActivationMatrix, ImageSetManifest};
use crate::statistics::{describe, mann_whitney_u, Describe, MwuResult};

pub use kfold::{kfold_pvalue, stratified_folds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Soft-margin penalty.
    pub c: f64,
    /// Pass budget of the linear solver.
    pub epochs: usize,
    pub tolerance: f64,
    pub split_fraction: f64,
    pub seed: u64,
    pub kfold_k: usize,
    pub permutations: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            c: 1.0,
            epochs: 1000,
            tolerance: 1e-3,
            split_fraction: 0.8,
            seed: 0,
            kfold_k: 5,
            permutations: 1000,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c.is_nan() || self.c <= 0.0 || self.tolerance.is_nan() || self.tolerance <= 0.0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("C, tolerance and epochs must be positive".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fraction {} not in (0, 1)",
                self.split_fraction
            )));
        }
        if self.kfold_k < 2 {
            return Err(Error::InvalidConfig("k-fold needs k >= 2".into()));
        }
        Ok(())
    }
}

/// Binary-labeled activation vectors for one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDataset {
    pub concept: String,
    rows: Array2<f64>,
    labels: Vec<bool>,
}

impl ConceptDataset {
    pub fn new(concept: impl Into<String>, rows: Array2<f64>, labels: Vec<bool>) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} rows but {} labels",
                rows.nrows(),
                labels.len()
            )));
        }
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            return Err(Error::InvalidData("concept dataset needs both labels".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        Ok(ConceptDataset {
            concept: concept.into(),
            rows,
            labels,
        })
    }

    /// Rows of `m` for the named positive and negative images.
    pub fn from_images(concept: &str, m: &ActivationMatrix, positive: &[String], negative: &[String]) -> Result<Self> {
        let pos = m.rows_of(positive.iter().map(String::as_str))?;
        let neg = m.rows_of(negative.iter().map(String::as_str))?;
        let d = m.neuron_count();
        let mut rows = Array2::zeros((pos.len() + neg.len(), d));
        for (i, &r) in pos.iter().chain(&neg).enumerate() {
            rows.row_mut(i).assign(&ArrayView1::from(m.row(r)));
        }
        let labels = std::iter::repeat_n(true, pos.len())
            .chain(std::iter::repeat_n(false, neg.len()))
            .collect();
        ConceptDataset::new(concept, rows, labels)
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn subset(&self, idx: &[usize]) -> ConceptDataset {
        ConceptDataset {
            concept: self.concept.clone(),
            rows: self.rows.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Seeded, label-stratified train/test split.
pub fn split_dataset(ds: &ConceptDataset, cfg: &ClassifierConfig) -> Result<(ConceptDataset, ConceptDataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::InvalidData(format!(
                "label {} has {} rows; at least 2 are needed to appear in both splits",
                u8::from(class),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let cut = ((idx.len() as f64 * cfg.split_fraction) + 1e-9).floor() as usize;
        let cut = cut.clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Per-dimension shift and scale fitted on training rows. Dimensions without
/// variance are centred but not scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(rows: ArrayView2<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean = rows.sum_axis(Axis(0)) / n;
        let mut scale = Array1::ones(rows.ncols());
        for (j, col) in rows.columns().into_iter().enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean[j].abs()) {
                scale[j] = sd;
            }
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        (&rows - &self.mean) / &self.scale
    }

    pub fn transform_row(&self, row: ArrayView1<f64>) -> Array1<f64> {
        (&row - &self.mean) / &self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    /// Linear SVM (concept activation vector).
    #[serde(rename = "CAV")]
    Linear,
    /// RBF-kernel SVM (concept activation region).
    #[serde(rename = "CAR")]
    Kernel,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Linear => "CAV",
            ClassifierKind::Kernel => "CAR",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear {
        weights: Array1<f64>,
        bias: f64,
    },
    Kernel {
        support: Array2<f64>,
        /// `αᵢ yᵢ` for each support row.
        coefficients: Array1<f64>,
        bias: f64,
        gamma: f64,
    },
    /// Training data carried a single label (only reachable inside permutation tests).
    Constant(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptClassifier {
    pub kind: ClassifierKind,
    pub standardizer: Standardizer,
    pub model: Model,
    pub train_accuracy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Linear only: dual objective after each pass.
    pub objective_trace: Vec<f64>,
}

impl ConceptClassifier {
    /// Signed margin of a standardized row.
    fn decision_std(&self, x: ArrayView1<f64>) -> f64 {
        match &self.model {
            Model::Linear { weights, bias } => x.dot(weights) + bias,
            Model::Kernel {
                support,
                coefficients,
                bias,
                gamma,
            } => {
                support
                    .rows()
                    .into_iter()
                    .zip(coefficients)
                    .map(|(s, c)| c * solver::rbf(s, x, *gamma))
                    .sum::<f64>()
                    + bias
            }
            Model::Constant(label) => {
                if *label {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn decision(&self, raw: ArrayView1<f64>) -> f64 {
        self.decision_std(self.standardizer.transform_row(raw).view())
    }

    pub fn predict(&self, raw: ArrayView1<f64>) -> bool {
        self.decision(raw) > 0.0
    }

    pub fn weights(&self) -> Option<&Array1<f64>> {
        match &self.model {
            Model::Linear { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

fn signed(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect()
}

fn check_trainable(train: &ConceptDataset) -> Result<()> {
    if !train.labels.iter().any(|&l| l) || train.labels.iter().all(|&l| l) {
        return Err(Error::InvalidData("training data has a single label".into()));
    }
    Ok(())
}

/// Width of the RBF kernel for standardized training rows.
pub fn rbf_gamma(standardized: ArrayView2<f64>) -> f64 {
    let d = standardized.ncols().max(1) as f64;
    let n = standardized.nrows().max(1) as f64;
    let mean_var = standardized
        .columns()
        .into_iter()
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / d;
    if mean_var > 0.0 {
        1.0 / (d * mean_var)
    } else {
        1.0 / d
    }
}

fn accuracy_of<F: Fn(usize) -> bool>(labels: &[bool], predict: F) -> f64 {
    let hits = labels.iter().enumerate().filter(|&(i, &l)| predict(i) == l).count();
    hits as f64 / labels.len() as f64
}

/// Fits a linear SVM on already-standardized rows.
fn fit_linear_std(
    x: ArrayView2<f64>,
    labels: &[bool],
    cfg: &ClassifierConfig,
    seed: u64,
) -> (Model, bool, usize, Vec<f64>) {
    if let Some(single) = single_label(labels) {
        return (Model::Constant(single), true, 0, Vec::new());
    }
    let sol = solver::linear_dual_cd(x, &signed(labels), cfg.c, cfg.tolerance, cfg.epochs, seed);
    (
        Model::Linear {
            weights: sol.weights,
            bias: sol.bias,
        },
        sol.converged,
        sol.passes,
        sol.objective_trace,
    )
}

/// Fits an RBF SVM from a precomputed Gram matrix over standardized rows.
fn fit_kernel_gram(
    x: ArrayView2<f64>,
    gram: ArrayView2<f64>,
    labels: &[bool],
    gamma: f64,
    cfg: &ClassifierConfig,
) -> (Model, bool, usize) {
    if let Some(single) = single_label(labels) {
        return (Model::Constant(single), true, 0);
    }
    let y = signed(labels);
    let sol = solver::smo(gram, &y, cfg.c, cfg.tolerance, 100 * labels.len());
    let support: Vec<usize> = (0..labels.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    let coefficients = support.iter().map(|&i| sol.alpha[i] * y[i]).collect();
    (
        Model::Kernel {
            support: x.select(Axis(0), &support),
            coefficients,
            bias: -sol.rho,
            gamma,
        },
        sol.converged,
        sol.iterations,
    )
}

fn single_label(labels: &[bool]) -> Option<bool> {
    let first = *labels.first()?;
    labels.iter().all(|&l| l == first).then_some(first)
}

/// Linear soft-margin SVM (CAV).
pub fn train_linear(train: &ConceptDataset, cfg: &ClassifierConfig) -> Result<ConceptClassifier> {
    cfg.validate()?;
    check_trainable(train)?;
    let standardizer = Standardizer::fit(train.rows());
    let x = standardizer.transform(train.rows());
    let (model, converged, iterations, objective_trace) = fit_linear_std(x.view(), &train.labels, cfg, cfg.seed);
    let mut clf = ConceptClassifier {
        kind: ClassifierKind::Linear,
        standardizer,
        model,
        train_accuracy: 0.0,
        converged,
        iterations,
        objective_trace,
    };
    clf.train_accuracy = accuracy_of(&train.labels, |i| clf.decision_std(x.row(i)) > 0.0);
    Ok(clf)
}

/// RBF-kernel soft-margin SVM (CAR).
pub fn train_kernel(train: &ConceptDataset, cfg: &ClassifierConfig) -> Result<ConceptClassifier> {
    cfg.validate()?;
    check_trainable(train)?;
    let standardizer = Standardizer::fit(train.rows());
    let x = standardizer.transform(train.rows());
    let gamma = rbf_gamma(x.view());
    let gram = solver::rbf_gram(x.view(), x.view(), gamma);
    let (model, converged, iterations) = fit_kernel_gram(x.view(), gram.view(), &train.labels, gamma, cfg);
    let mut clf = ConceptClassifier {
        kind: ClassifierKind::Kernel,
        standardizer,
        model,
        train_accuracy: 0.0,
        converged,
        iterations,
        objective_trace: Vec::new(),
    };
    clf.train_accuracy = accuracy_of(&train.labels, |i| clf.decision_std(x.row(i)) > 0.0);
    Ok(clf)
}

pub fn train(kind: ClassifierKind, train: &ConceptDataset, cfg: &ClassifierConfig) -> Result<ConceptClassifier> {
    match kind {
        ClassifierKind::Linear => train_linear(train, cfg),
        ClassifierKind::Kernel => train_kernel(train, cfg),
    }
}

/// Fraction of correctly classified rows.
pub fn evaluate(model: &ConceptClassifier, test: &ConceptDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySample("test set"));
    }
    if test.dim() != model.standardizer.mean.len() {
        return Err(Error::InvalidData(format!(
            "model expects {} features, test rows have {}",
            model.standardizer.mean.len(),
            test.dim()
        )));
    }
    Ok(accuracy_of(&test.labels, |i| model.predict(test.rows.row(i))))
}

/// One row of the per-concept accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptAccuracy {
    pub concept: String,
    pub method: ClassifierKind,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub converged: bool,
    pub p_value: Option<f64>,
}

/// Split, train, test and optionally run the k-fold permutation test.
pub fn analyze_concept(
    ds: &ConceptDataset,
    kind: ClassifierKind,
    cfg: &ClassifierConfig,
    with_p_value: bool,
) -> Result<ConceptAccuracy> {
    let (tr, te) = split_dataset(ds, cfg)?;
    let model = train(kind, &tr, cfg)?;
    let test_accuracy = evaluate(&model, &te)?;
    let p_value = if with_p_value {
        Some(kfold_pvalue(ds, kind, cfg)?)
    } else {
        None
    };
    Ok(ConceptAccuracy {
        concept: ds.concept.clone(),
        method: kind,
        train_accuracy: model.train_accuracy,
        test_accuracy,
        converged: model.converged,
        p_value,
    })
}

/// Mann-Whitney comparison of two methods' per-concept accuracies, oriented
/// so that a positive z means method A scores higher.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodComparison {
    pub mwu: MwuResult,
    pub a: Describe,
    pub b: Describe,
}

pub fn compare_methods(acc_a: &[f64], acc_b: &[f64]) -> Result<MethodComparison> {
    let mwu = mann_whitney_u(acc_b, acc_a)?;
    Ok(MethodComparison {
        mwu,
        a: describe(acc_a)?,
        b: describe(acc_b)?,
    })
}

/// Positive and negative image names for one concept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptImages {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

/// Concept -> images; the concept dataset manifest.
pub type ConceptManifest = BTreeMap<String, ConceptImages>;

/// Positives are the concept's own images; negatives are an equal-sized
/// seeded sample of images listed only under other concepts.
pub fn assemble_concept_manifest(images: &ImageSetManifest, seed: u64) -> ConceptManifest {
    let mut out = BTreeMap::new();
    for (i, (concept, positive)) in images.iter().enumerate() {
        let own: BTreeSet<&str> = positive.iter().map(String::as_str).collect();
        let mut pool: Vec<&str> = images
            .iter()
            .filter(|(c, _)| *c != concept)
            .flat_map(|(_, v)| v.iter().map(String::as_str))
            .filter(|n| !own.contains(n))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        pool.shuffle(&mut rng);
        pool.truncate(positive.len());
        pool.sort_unstable();
        out.insert(
            concept.to_string(),
            ConceptImages {
                positive: positive.to_vec(),
                negative: pool.into_iter().map(str::to_string).collect(),
            },
        );
    }
    out
}
