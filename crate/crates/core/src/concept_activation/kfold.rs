//! k-fold cross-validated accuracy and its label-permutation p-value.
//!
//! Folds are stratified on the observed labels and kept fixed for every
//! permuted re-run, so per-fold standardization and kernel matrices are
//! computed once. Labels are permuted within each fold: a global shuffle would
//! leave the re-runs with unbalanced folds, whose cross-validated accuracy
//! sits below chance, and the p-value would come out too small.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit_linear_std, rbf_gamma, solver, ClassifierConfig, ClassifierKind, ConceptDataset, Model, Standardizer};
use crate::error::{Error, Result};

/// Test-row indices of each fold, stratified by label.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig("k-fold needs k >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for (offset, class) in [true, false].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InvalidData(format!(
                "label {} has {} rows, fewer than k = {k} folds",
                u8::from(class),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[(j + offset) % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

struct Fold {
    train: Vec<usize>,
    test: Vec<usize>,
    x_train: Array2<f64>,
    x_test: Array2<f64>,
    /// Kernel only: `(train Gram, test × train kernel)`.
    kernel: Option<(Array2<f64>, Array2<f64>)>,
}

fn prepare(ds: &ConceptDataset, kind: ClassifierKind, folds: &[Vec<usize>]) -> Vec<Fold> {
    folds
        .iter()
        .map(|test| {
            let train: Vec<usize> = (0..ds.len()).filter(|i| test.binary_search(i).is_err()).collect();
            let raw_train = ds.rows().select(Axis(0), &train);
            let st = Standardizer::fit(raw_train.view());
            let x_train = st.transform(raw_train.view());
            let x_test = st.transform(ds.rows().select(Axis(0), test).view());
            let kernel = (kind == ClassifierKind::Kernel).then(|| {
                let gamma = rbf_gamma(x_train.view());
                let gram = solver::rbf_gram(x_train.view(), x_train.view(), gamma);
                let cross = solver::rbf_gram(x_test.view(), x_train.view(), gamma);
                (gram, cross)
            });
            Fold {
                train,
                test: test.clone(),
                x_train,
                x_test,
                kernel,
            }
        })
        .collect()
}

fn mean_fold_accuracy(folds: &[Fold], labels: &[bool], cfg: &ClassifierConfig) -> f64 {
    let mut total = 0.0;
    for f in folds {
        let y_train: Vec<bool> = f.train.iter().map(|&i| labels[i]).collect();
        let y_test: Vec<bool> = f.test.iter().map(|&i| labels[i]).collect();
        let predictions: Vec<bool> = match &f.kernel {
            None => {
                let (model, ..) = fit_linear_std(f.x_train.view(), &y_train, cfg, cfg.seed);
                match model {
                    Model::Linear { weights, bias } => f
                        .x_test
                        .rows()
                        .into_iter()
                        .map(|r| r.dot(&weights) + bias > 0.0)
                        .collect(),
                    Model::Constant(l) => vec![l; y_test.len()],
                    Model::Kernel { .. } => unreachable!("linear fit returned a kernel model"),
                }
            }
            Some((gram, cross)) => match super::single_label(&y_train) {
                Some(l) => vec![l; y_test.len()],
                None => {
                    let y = super::signed(&y_train);
                    let sol = solver::smo(gram.view(), &y, cfg.c, cfg.tolerance, 100 * y.len());
                    let coef: Vec<f64> = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).collect();
                    cross
                        .rows()
                        .into_iter()
                        .map(|row| row.iter().zip(&coef).map(|(k, c)| k * c).sum::<f64>() - sol.rho > 0.0)
                        .collect()
                }
            },
        };
        let hits = predictions.iter().zip(&y_test).filter(|(p, y)| p == y).count();
        total += hits as f64 / y_test.len() as f64;
    }
    total / folds.len() as f64
}

/// `(1 + #{null ≥ observed}) / (1 + permutations)`, where the statistic is the
/// mean k-fold test accuracy and the null re-runs it on labels permuted within
/// each fold.
pub fn kfold_pvalue(ds: &ConceptDataset, kind: ClassifierKind, cfg: &ClassifierConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.permutations == 0 {
        return Err(Error::InvalidConfig(
            "permutation test needs at least one permutation".into(),
        ));
    }
    let folds = stratified_folds(ds.labels(), cfg.kfold_k, cfg.seed)?;
    let prepared = prepare(ds, kind, &folds);
    let observed = mean_fold_accuracy(&prepared, ds.labels(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut labels = ds.labels().to_vec();
    let mut fold_labels: Vec<bool> = Vec::new();
    let mut at_least = 0usize;
    for _ in 0..cfg.permutations {
        for f in &folds {
            fold_labels.clear();
            fold_labels.extend(f.iter().map(|&i| labels[i]));
            fold_labels.shuffle(&mut rng);
            for (&i, &l) in f.iter().zip(&fold_labels) {
                labels[i] = l;
            }
        }
        if mean_fold_accuracy(&prepared, &labels, cfg) >= observed {
            at_least += 1;
        }
    }
    Ok((1 + at_least) as f64 / (1 + cfg.permutations) as f64)
}
