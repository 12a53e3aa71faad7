//! Coverage-driven concept induction over a [`KnowledgeBase`].
//!
//! Given positive and negative images, the search scores every atomic class
//! that holds for at least one positive, keeps a beam of the best atoms, and
//! then scores conjunctions built from that beam. Expressions are ranked by
//!
//! 1. coverage, descending;
//! 2. number of covered positives (`z1`), descending;
//! 3. number of conjuncts, ascending;
//! 4. conjunct names (sorted) compared lexicographically.
//!
//! Expressions that hold for no positive are never returned.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{ClassHierarchy, ClassId};
use crate::knowledge_base::{ClassExpression, ImageId, KnowledgeBase, DEFAULT_MAX_CONJUNCTS};

/// Positive (`P`) and negative (`N`) examples. Both sorted, disjoint, and not
/// both empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSets {
    positives: Vec<ImageId>,
    negatives: Vec<ImageId>,
}

impl ExampleSets {
    pub fn new(mut positives: Vec<ImageId>, mut negatives: Vec<ImageId>) -> Result<Self> {
        positives.sort_unstable();
        positives.dedup();
        negatives.sort_unstable();
        negatives.dedup();
        if positives.is_empty() && negatives.is_empty() {
            return Err(Error::InvalidExamples("P and N are both empty".into()));
        }
        let mut j = 0;
        for p in &positives {
            while j < negatives.len() && negatives[j] < *p {
                j += 1;
            }
            if j < negatives.len() && negatives[j] == *p {
                return Err(Error::InvalidExamples(format!(
                    "image id {} is both positive and negative",
                    p.0
                )));
            }
        }
        Ok(ExampleSets { positives, negatives })
    }

    pub fn positives(&self) -> &[ImageId] {
        &self.positives
    }

    pub fn negatives(&self) -> &[ImageId] {
        &self.negatives
    }

    /// `|P ∪ N|`
    pub fn total(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    fn check(&self, kb: &KnowledgeBase) -> Result<()> {
        let n = kb.image_count();
        match self.positives.iter().chain(&self.negatives).find(|i| i.index() >= n) {
            Some(bad) => Err(Error::UnknownImageId(bad.0)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypothesis {
    pub expression: ClassExpression,
    /// `(z1_count + z2_count) / |P ∪ N|`
    pub coverage: f64,
    /// Positives that are instances of the expression.
    pub z1_count: usize,
    /// Negatives that are not instances of the expression.
    pub z2_count: usize,
}

impl ScoredHypothesis {
    fn from_counts(expression: ClassExpression, z1: usize, z2: usize, total: usize) -> Self {
        ScoredHypothesis {
            expression,
            coverage: (z1 + z2) as f64 / total as f64,
            z1_count: z1,
            z2_count: z2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductionConfig {
    pub max_conjuncts: usize,
    pub beam_width: usize,
    pub top_k: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            max_conjuncts: DEFAULT_MAX_CONJUNCTS,
            beam_width: 50,
            top_k: 3,
        }
    }
}

impl InductionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_conjuncts == 0 || self.beam_width == 0 || self.top_k == 0 {
            return Err(Error::InvalidConfig(
                "max_conjuncts, beam_width and top_k must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Scores one expression by direct entailment checks.
pub fn coverage(kb: &KnowledgeBase, expr: &ClassExpression, ex: &ExampleSets) -> Result<ScoredHypothesis> {
    if ex.total() == 0 {
        return Err(Error::InvalidExamples("P ∪ N is empty".into()));
    }
    ex.check(kb)?;
    for &c in expr.conjuncts() {
        kb.hierarchy().try_name(c)?;
    }
    let mut z1 = 0;
    for &p in ex.positives() {
        z1 += usize::from(kb.satisfies(p, expr)?);
    }
    let mut z2 = 0;
    for &n in ex.negatives() {
        z2 += usize::from(!kb.satisfies(n, expr)?);
    }
    Ok(ScoredHypothesis::from_counts(expr.clone(), z1, z2, ex.total()))
}

/// Atomic classes that hold for at least one positive, sorted by id.
pub fn candidate_atoms(kb: &KnowledgeBase, ex: &ExampleSets) -> Result<Vec<ClassId>> {
    ex.check(kb)?;
    let mut out: Vec<ClassId> = ex
        .positives()
        .iter()
        .flat_map(|&p| kb.types(p).iter().copied())
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Total ranking order; `Less` means `a` ranks higher.
pub fn rank_order(h: &ClassHierarchy, a: &ScoredHypothesis, b: &ScoredHypothesis) -> Ordering {
    (b.z1_count + b.z2_count)
        .cmp(&(a.z1_count + a.z2_count))
        .then(b.z1_count.cmp(&a.z1_count))
        .then(a.expression.len().cmp(&b.expression.len()))
        .then_with(|| a.expression.names(h).cmp(&b.expression.names(h)))
}

fn sort_ranked(h: &ClassHierarchy, list: &mut [ScoredHypothesis]) {
    list.sort_by(|a, b| rank_order(h, a, b));
}

/// Membership of each example (positives first, then negatives) as a bit set.
#[derive(Clone)]
struct ExampleBits(Vec<u64>);

impl ExampleBits {
    fn of(kb: &KnowledgeBase, examples: &[ImageId], class: ClassId) -> Self {
        let mut words = vec![0u64; examples.len().div_ceil(64)];
        for (i, &img) in examples.iter().enumerate() {
            if kb.has_types(img, &[class]) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        ExampleBits(words)
    }

    fn and(&self, other: &ExampleBits) -> ExampleBits {
        ExampleBits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    /// Set bits in `[0, split)` and `[split, ..)`.
    fn split_count(&self, split: usize) -> (usize, usize) {
        let mut lo = 0usize;
        let mut hi = 0usize;
        for (w, &word) in self.0.iter().enumerate() {
            let base = w * 64;
            if base + 64 <= split {
                lo += word.count_ones() as usize;
            } else if base >= split {
                hi += word.count_ones() as usize;
            } else {
                let mask = (1u64 << (split - base)) - 1;
                lo += (word & mask).count_ones() as usize;
                hi += (word & !mask).count_ones() as usize;
            }
        }
        (lo, hi)
    }
}

/// Ranked hypotheses for one example split, at most `cfg.top_k` of them.
pub fn induce(kb: &KnowledgeBase, ex: &ExampleSets, cfg: &InductionConfig) -> Result<Vec<ScoredHypothesis>> {
    cfg.validate()?;
    ex.check(kb)?;
    let h = kb.hierarchy();
    let total = ex.total();
    let n_pos = ex.positives().len();
    let n_neg = ex.negatives().len();

    // (z1, negatives satisfied) for every candidate atom.
    let mut tally: HashMap<ClassId, (usize, usize)> = HashMap::new();
    for &p in ex.positives() {
        for &c in kb.types(p) {
            tally.entry(c).or_default().0 += 1;
        }
    }
    if tally.is_empty() {
        return Ok(Vec::new());
    }
    for &n in ex.negatives() {
        for c in kb.types(n) {
            if let Some(t) = tally.get_mut(c) {
                t.1 += 1;
            }
        }
    }
    let mut atoms: Vec<ScoredHypothesis> = tally
        .into_iter()
        .map(|(c, (z1, neg))| ScoredHypothesis::from_counts(ClassExpression::atom(c), z1, n_neg - neg, total))
        .collect();
    sort_ranked(h, &mut atoms);

    let beam: Vec<ClassId> = atoms
        .iter()
        .take(cfg.beam_width)
        .map(|s| s.expression.conjuncts()[0])
        .collect();
    let mut results = atoms;

    if cfg.max_conjuncts >= 2 && beam.len() >= 2 {
        let examples: Vec<ImageId> = ex.positives().iter().chain(ex.negatives()).copied().collect();
        let bits: HashMap<ClassId, ExampleBits> =
            beam.iter().map(|&c| (c, ExampleBits::of(kb, &examples, c))).collect();
        let mut level: Vec<(ClassExpression, ExampleBits)> = beam
            .iter()
            .map(|&c| (ClassExpression::atom(c), bits[&c].clone()))
            .collect();
        let mut seen: HashSet<ClassExpression> = HashSet::new();
        for _ in 2..=cfg.max_conjuncts {
            let mut next: Vec<(ScoredHypothesis, ExampleBits)> = Vec::new();
            for (base, base_bits) in &level {
                for &atom in &beam {
                    if base
                        .conjuncts()
                        .iter()
                        .any(|&c| c == atom || h.subsumes_unchecked(c, atom) || h.subsumes_unchecked(atom, c))
                    {
                        continue;
                    }
                    let mut conj = base.conjuncts().to_vec();
                    conj.push(atom);
                    let expr = ClassExpression::new(conj)?;
                    if !seen.insert(expr.clone()) {
                        continue;
                    }
                    let joint = base_bits.and(&bits[&atom]);
                    let (z1, neg_sat) = joint.split_count(n_pos);
                    if z1 == 0 {
                        continue;
                    }
                    next.push((ScoredHypothesis::from_counts(expr, z1, n_neg - neg_sat, total), joint));
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort_by(|a, b| rank_order(h, &a.0, &b.0));
            results.extend(next.iter().map(|(s, _)| s.clone()));
            level = next
                .into_iter()
                .take(cfg.beam_width)
                .map(|(s, b)| (s.expression, b))
                .collect();
        }
        sort_ranked(h, &mut results);
    }
    results.truncate(cfg.top_k);
    Ok(results)
}
