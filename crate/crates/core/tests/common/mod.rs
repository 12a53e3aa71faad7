//! Reference implementations for the integration tests. They work on plain
//! parent lists and never touch the library's closure index or search.
#![allow(dead_code)]

use std::collections::HashMap;

use neurolabel::{build_kb, ClassExpression, HierarchyBuilder, ImageAnnotation, ImageId, KnowledgeBase};
use rand::seq::SliceRandom;
use rand::Rng;

/// Small KB as parent lists and asserted classes per image.
#[derive(Debug, Clone)]
pub struct RawKb {
    pub names: Vec<String>,
    pub parents: Vec<Vec<usize>>,
    pub images: Vec<Vec<usize>>,
}

/// Random DAG with `2..=max_classes` classes (each class draws up to two
/// parents among earlier ones) and `1..=max_images` images with up to
/// `max_tags` tags each. Names are shuffled so ids carry no depth signal.
pub fn random_raw_kb<R: Rng>(rng: &mut R, max_classes: usize, max_images: usize, max_tags: usize) -> RawKb {
    let n = rng.gen_range(2..=max_classes);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let names = perm.iter().map(|p| format!("class_{p:02}")).collect();
    let mut parents = vec![Vec::new(); n];
    for (i, ps) in parents.iter_mut().enumerate().skip(1) {
        let k = rng.gen_range(0..=i.min(2));
        let mut pool: Vec<usize> = (0..i).collect();
        pool.shuffle(rng);
        ps.extend_from_slice(&pool[..k]);
    }
    let m = rng.gen_range(1..=max_images);
    let images = (0..m)
        .map(|_| {
            let t = rng.gen_range(0..=max_tags);
            (0..t).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect();
    RawKb { names, parents, images }
}

/// `anc[c][d]`: `d` is `c` or one of its ancestors. Plain DFS per class.
pub fn closure(parents: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = parents.len();
    (0..n)
        .map(|c| {
            let mut seen = vec![false; n];
            let mut stack = vec![c];
            while let Some(v) = stack.pop() {
                if !seen[v] {
                    seen[v] = true;
                    stack.extend(&parents[v]);
                }
            }
            seen
        })
        .collect()
}

pub fn image_name(j: usize) -> String {
    format!("img_{j:03}")
}

impl RawKb {
    pub fn build(&self) -> KnowledgeBase {
        let mut b = HierarchyBuilder::new();
        for name in &self.names {
            b.add_class(name);
        }
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                b.add_edge(&self.names[c], &self.names[p]).unwrap();
            }
        }
        let ann: Vec<ImageAnnotation> = self
            .images
            .iter()
            .enumerate()
            .map(|(j, tags)| ImageAnnotation::new(image_name(j), tags.iter().map(|&t| self.names[t].clone())))
            .collect();
        build_kb(b.build().unwrap(), &ann, 0).unwrap()
    }

    /// Raw class index of every library class id.
    pub fn index_of(&self, kb: &KnowledgeBase) -> HashMap<String, usize> {
        assert_eq!(kb.hierarchy().class_count(), self.names.len());
        self.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
    }

    /// Membership by extension: some asserted class lies below every conjunct.
    pub fn instance(&self, anc: &[Vec<bool>], image: usize, conj: &[usize]) -> bool {
        conj.iter().all(|&c| self.images[image].iter().any(|&d| anc[d][c]))
    }

    pub fn counts(&self, anc: &[Vec<bool>], conj: &[usize], pos: &[usize], neg: &[usize]) -> (usize, usize) {
        let z1 = pos.iter().filter(|&&i| self.instance(anc, i, conj)).count();
        let z2 = neg.iter().filter(|&&i| !self.instance(anc, i, conj)).count();
        (z1, z2)
    }

    /// Best `z1 + z2` over every conjunction of one or two classes that
    /// covers at least one positive.
    pub fn exhaustive_best(&self, anc: &[Vec<bool>], pos: &[usize], neg: &[usize]) -> Option<usize> {
        let n = self.names.len();
        let mut best = None;
        let mut consider = |conj: &[usize]| {
            let (z1, z2) = self.counts(anc, conj, pos, neg);
            if z1 > 0 && best.is_none_or(|b| z1 + z2 > b) {
                best = Some(z1 + z2);
            }
        };
        for a in 0..n {
            consider(&[a]);
            for b in a + 1..n {
                consider(&[a, b]);
            }
        }
        best
    }

    /// Random disjoint P and N over the images, not both empty.
    pub fn random_split<R: Rng>(&self, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
        loop {
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for j in 0..self.images.len() {
                match rng.gen_range(0..5) {
                    0 | 1 => pos.push(j),
                    2 | 3 => neg.push(j),
                    _ => {}
                }
            }
            if !pos.is_empty() || !neg.is_empty() {
                return (pos, neg);
            }
        }
    }
}

pub fn image_ids(kb: &KnowledgeBase, raw: &[usize]) -> Vec<ImageId> {
    raw.iter().map(|&j| kb.image_id(&image_name(j)).unwrap()).collect()
}

pub fn raw_conjuncts(kb: &KnowledgeBase, index: &HashMap<String, usize>, e: &ClassExpression) -> Vec<usize> {
    e.names(kb.hierarchy()).iter().map(|n| index[*n]).collect()
}

/// `#{(i, j) : a_i > b_j} + ½ #{(i, j) : a_i = b_j}`
pub fn pair_count_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// `P(U' ≥ U)` over every relabeling of the pooled values, U by pair counting.
pub fn exact_upper_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let observed = pair_count_u(a, b);
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (i, &v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                x.push(v);
            } else {
                y.push(v);
            }
        }
        total += 1;
        if pair_count_u(&x, &y) >= observed - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

/// Two Gaussian clouds `sep` apart on every axis, labels alternating.
pub fn clouds(n_per: usize, d: usize, sep: f64, seed: u64) -> neurolabel::concept_activation::ConceptDataset {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = ndarray::Array2::zeros((2 * n_per, d));
    let mut labels = Vec::with_capacity(2 * n_per);
    for i in 0..2 * n_per {
        let pos = i % 2 == 0;
        let shift = if pos { sep / 2.0 } else { -sep / 2.0 };
        for j in 0..d {
            rows[[i, j]] = noise.sample(&mut rng) + shift;
        }
        labels.push(pos);
    }
    neurolabel::concept_activation::ConceptDataset::new("clouds", rows, labels).unwrap()
}

/// Four blobs at `(±1, ±1)`; positive when the signs differ.
pub fn xor(n: usize, seed: u64) -> neurolabel::concept_activation::ConceptDataset {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut rows = ndarray::Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (i % 2 == 0, (i / 2) % 2 == 0);
        rows[[i, 0]] = if a { 1.0 } else { -1.0 } + noise.sample(&mut rng);
        rows[[i, 1]] = if b { 1.0 } else { -1.0 } + noise.sample(&mut rng);
        labels.push(a != b);
    }
    neurolabel::concept_activation::ConceptDataset::new("xor", rows, labels).unwrap()
}
