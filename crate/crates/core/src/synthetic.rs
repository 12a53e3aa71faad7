//! Planted-concept generator.
//!
//! Builds a random levelled class DAG, an annotated image corpus and an
//! activation matrix in which each planted neuron fires on exactly the images
//! carrying its class or a descendant. The induction pipeline can then be
//! scored against the known neuron -> class map.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{ClassHierarchy, ClassId, HierarchyBuilder};
use crate::knowledge_base::{canonical_label, ClassExpression, ImageAnnotation};
use crate::neuron_analysis::{
    ActivationMatrix, ConfirmationRecord, EvaluationRecord, ImageSetManifest, NeuronLabelRecord,
};

/// Upper bound of the binomial distractor-tag count per image.
pub const MAX_DISTRACTORS: u64 = 6;

/// Share of images outside the round-robin quota whose scene is a planted class.
const PLANTED_SCENE_RATE: f64 = 0.85;

/// Minimum number of images whose scene is each planted class.
pub const MIN_IMAGES_PER_PLANTED: usize = 5;

/// Tags that map to no class in any generated hierarchy.
const UNMAPPABLE_TAGS: [&str; 8] = [
    "unlisted object",
    "blurry region",
    "misc item",
    "unknown thing",
    "background clutter",
    "unidentified shape",
    "stray mark",
    "other stuff",
];

/// Which neurons are planted, and on which class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedMap {
    /// The generator picks this many neurons and gives each a distinct class
    /// at depth ≥ 2 that is not nested in another planted class.
    Auto { active_neurons: usize },
    /// Neuron -> class name.
    Explicit(BTreeMap<usize, String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub class_count: usize,
    /// Number of levels below the roots.
    pub depth: usize,
    pub roots: usize,
    /// Chance that a class gets a second parent from a shallower level.
    pub extra_parent_rate: f64,
    pub images: usize,
    pub neurons: usize,
    pub planted: PlantedMap,
    pub signal: f64,
    pub noise_sigma: f64,
    /// Success probability of each of the `MAX_DISTRACTORS` distractor draws.
    pub distractor_tag_rate: f64,
    /// Chance that an image also carries a tag no class matches.
    pub unmapped_tag_rate: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            class_count: 500,
            depth: 6,
            roots: 3,
            extra_parent_rate: 0.1,
            images: 1000,
            neurons: 64,
            planted: PlantedMap::Auto { active_neurons: 56 },
            signal: 4.0,
            noise_sigma: 0.2,
            distractor_tag_rate: 0.3,
            unmapped_tag_rate: 0.1,
            rng_seed: 0,
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.roots == 0 || self.class_count < self.roots {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= roots <= class_count, got roots = {} and class_count = {}",
                self.roots, self.class_count
            )));
        }
        if self.depth > 32 {
            return Err(Error::InvalidConfig(format!("depth {} exceeds 32", self.depth)));
        }
        if self.images == 0 || self.neurons == 0 {
            return Err(Error::InvalidConfig("images and neurons must be positive".into()));
        }
        if !(self.signal.is_finite() && self.signal > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "signal must be positive, got {}",
                self.signal
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        check_rate("extra_parent_rate", self.extra_parent_rate)?;
        check_rate("distractor_tag_rate", self.distractor_tag_rate)?;
        check_rate("unmapped_tag_rate", self.unmapped_tag_rate)?;
        let planted = match &self.planted {
            PlantedMap::Auto { active_neurons } => *active_neurons,
            PlantedMap::Explicit(map) => {
                if let Some(&n) = map.keys().find(|&&n| n >= self.neurons) {
                    return Err(Error::InvalidConfig(format!(
                        "planted neuron {n} out of range (network has {})",
                        self.neurons
                    )));
                }
                map.len()
            }
        };
        if planted > self.neurons {
            return Err(Error::InvalidConfig(format!(
                "{planted} planted neurons exceed the {} available",
                self.neurons
            )));
        }
        if planted * MIN_IMAGES_PER_PLANTED > self.images {
            return Err(Error::InvalidConfig(format!(
                "{} images cannot give each of {planted} planted neurons {MIN_IMAGES_PER_PLANTED} images",
                self.images
            )));
        }
        Ok(())
    }
}

/// Generated corpus with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub config: SyntheticConfig,
    pub hierarchy: ClassHierarchy,
    pub annotations: Vec<ImageAnnotation>,
    pub activations: ActivationMatrix,
    /// Planted neuron -> class name.
    pub ground_truth: BTreeMap<usize, String>,
    planted: Vec<(usize, ClassId)>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Number of classes on each level: `roots` on level 0, the rest spread over
/// `depth` levels with widths doubling per level. With `depth = 0` every
/// class is a root.
fn level_widths(class_count: usize, depth: usize, roots: usize) -> Vec<usize> {
    let rest = class_count - roots;
    let depth = depth.min(rest);
    if depth == 0 {
        return vec![class_count];
    }
    let mut widths = vec![roots];
    let total: f64 = (1..=depth).map(|l| 2f64.powi(l as i32)).sum();
    let spare = rest - depth;
    let mut assigned = 0;
    for l in 1..=depth {
        let w = (spare as f64 * 2f64.powi(l as i32) / total).floor() as usize + 1;
        widths.push(w);
        assigned += w;
    }
    *widths.last_mut().expect("depth >= 1") += rest - assigned;
    widths
}

/// Random levelled DAG. Every class on level `l ≥ 1` has one parent on level
/// `l - 1` and, with probability `extra_parent_rate`, a second parent on any
/// shallower level. Names are `concept_NNNN` under a random permutation, so
/// name order says nothing about depth.
pub fn generate_hierarchy(
    class_count: usize,
    depth: usize,
    roots: usize,
    extra_parent_rate: f64,
    seed: u64,
) -> Result<ClassHierarchy> {
    if roots == 0 || class_count < roots {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= roots <= class_count, got roots = {roots} and class_count = {class_count}"
        )));
    }
    check_rate("extra_parent_rate", extra_parent_rate)?;
    let mut rng = rng_for(seed, 1);
    let widths = level_widths(class_count, depth, roots);
    let digits = (class_count.saturating_sub(1)).to_string().len().max(4);
    let mut labels: Vec<u32> = (0..class_count as u32).collect();
    labels.shuffle(&mut rng);
    let mut b = HierarchyBuilder::new();
    let ids: Vec<ClassId> = labels
        .iter()
        .map(|l| b.add_class(&format!("concept_{l:0digits$}")))
        .collect();
    let mut start = 0;
    let mut prev = 0..0;
    for &w in &widths {
        let level = start..start + w;
        if !prev.is_empty() {
            for node in level.clone() {
                let parent = rng.gen_range(prev.clone());
                b.add_edge_ids(ids[node], ids[parent]);
                if rng.gen_bool(extra_parent_rate) {
                    let extra = rng.gen_range(0..start);
                    if extra != parent {
                        b.add_edge_ids(ids[node], ids[extra]);
                    }
                }
            }
        }
        prev = level;
        start += w;
    }
    b.build()
}

/// Random walk down from `c` that stops at each step with probability ½.
fn random_descendant(h: &ClassHierarchy, mut c: ClassId, rng: &mut impl Rng) -> ClassId {
    loop {
        let ch = h.children(c);
        if ch.is_empty() || rng.gen_bool(0.5) {
            return c;
        }
        c = ch[rng.gen_range(0..ch.len())];
    }
}

fn random_class(h: &ClassHierarchy, rng: &mut impl Rng) -> ClassId {
    ClassId(rng.gen_range(0..h.class_count() as u32))
}

fn pick_planted(cfg: &SyntheticConfig, h: &ClassHierarchy) -> Result<Vec<(usize, ClassId)>> {
    match &cfg.planted {
        PlantedMap::Explicit(map) => map
            .iter()
            .map(|(&n, name)| {
                h.class_id(name)
                    .map(|c| (n, c))
                    .ok_or_else(|| Error::UnknownClass(name.clone()))
            })
            .collect(),
        PlantedMap::Auto { active_neurons } => {
            let mut rng = rng_for(cfg.rng_seed, 2);
            let mut neurons: Vec<usize> = (0..cfg.neurons).collect();
            neurons.shuffle(&mut rng);
            neurons.truncate(*active_neurons);
            neurons.sort_unstable();
            let min_level = cfg.depth.min(2) as u32;
            let mut candidates: Vec<ClassId> = h.classes().filter(|&c| h.level(c) >= min_level).collect();
            candidates.shuffle(&mut rng);
            let mut chosen: Vec<ClassId> = Vec::with_capacity(neurons.len());
            for c in candidates {
                if chosen.len() == neurons.len() {
                    break;
                }
                if chosen
                    .iter()
                    .all(|&o| !h.subsumes_unchecked(o, c) && !h.subsumes_unchecked(c, o))
                {
                    chosen.push(c);
                }
            }
            if chosen.len() < neurons.len() {
                return Err(Error::InvalidConfig(format!(
                    "only {} non-nested classes at depth >= {min_level}; cannot plant {} neurons",
                    chosen.len(),
                    neurons.len()
                )));
            }
            Ok(neurons.into_iter().zip(chosen).collect())
        }
    }
}

/// Tag text for a class, sometimes in display form (`Concept 0042`) so that
/// normalization is exercised.
fn render_tag(h: &ClassHierarchy, c: ClassId, rng: &mut impl Rng) -> String {
    let name = h.name(c);
    if rng.gen_bool(0.2) {
        let mut s = name.replace('_', " ");
        if let Some(first) = s.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        s
    } else {
        name.to_string()
    }
}

struct Sampler<'a> {
    cfg: &'a SyntheticConfig,
    h: &'a ClassHierarchy,
    planted: &'a [(usize, ClassId)],
    distractors: Binomial,
    noise: Option<Normal<f64>>,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a SyntheticConfig, h: &'a ClassHierarchy, planted: &'a [(usize, ClassId)]) -> Result<Self> {
        let distractors = Binomial::new(MAX_DISTRACTORS, cfg.distractor_tag_rate)
            .map_err(|e| Error::InvalidConfig(format!("distractor_tag_rate: {e}")))?;
        let noise = if cfg.noise_sigma > 0.0 {
            Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(format!("noise_sigma: {e}")))?)
        } else {
            None
        };
        Ok(Sampler {
            cfg,
            h,
            planted,
            distractors,
            noise,
        })
    }

    /// Adds distractor classes and possibly an unmappable tag, then renders
    /// the tags. Returns the tags and the classes they denote.
    fn finish_tags(&self, mut classes: Vec<ClassId>, rng: &mut impl Rng) -> (Vec<String>, Vec<ClassId>) {
        for _ in 0..self.distractors.sample(rng) {
            classes.push(random_class(self.h, rng));
        }
        let mut tags = Vec::with_capacity(classes.len() + 1);
        let mut seen = BTreeSet::new();
        for &c in &classes {
            if seen.insert(c) {
                tags.push(render_tag(self.h, c, rng));
            }
        }
        if rng.gen_bool(self.cfg.unmapped_tag_rate) {
            tags.push(UNMAPPABLE_TAGS[rng.gen_range(0..UNMAPPABLE_TAGS.len())].to_string());
        }
        classes.sort_unstable();
        classes.dedup();
        (tags, classes)
    }

    fn activations(&self, classes: &[ClassId], row: &mut [f64], rng: &mut impl Rng) {
        for &(neuron, c) in self.planted {
            let carries = classes.iter().any(|&t| self.h.subsumes_unchecked(c, t));
            let noise = self.noise.map_or(0.0, |n| n.sample(rng).abs());
            row[neuron] = if carries { self.cfg.signal } else { 0.0 } + noise;
        }
    }
}

fn index_width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(4)
}

/// Generates a bundle; identical configs give identical bundles.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticBundle> {
    cfg.validate()?;
    let hierarchy = generate_hierarchy(
        cfg.class_count,
        cfg.depth,
        cfg.roots,
        cfg.extra_parent_rate,
        cfg.rng_seed,
    )?;
    let planted = pick_planted(cfg, &hierarchy)?;
    let sampler = Sampler::new(cfg, &hierarchy, &planted)?;
    let mut rng = rng_for(cfg.rng_seed, 3);

    let mut scenes: Vec<ClassId> = Vec::with_capacity(cfg.images);
    let quota = planted.len() * MIN_IMAGES_PER_PLANTED;
    for i in 0..cfg.images {
        let scene = if i < quota {
            planted[i % planted.len()].1
        } else if !planted.is_empty() && rng.gen_bool(PLANTED_SCENE_RATE) {
            planted[rng.gen_range(0..planted.len())].1
        } else {
            random_class(&hierarchy, &mut rng)
        };
        scenes.push(scene);
    }
    scenes.shuffle(&mut rng);

    let width = index_width(cfg.images);
    let mut annotations = Vec::with_capacity(cfg.images);
    let mut names = Vec::with_capacity(cfg.images);
    let mut values = vec![0.0; cfg.images * cfg.neurons];
    for (i, &scene) in scenes.iter().enumerate() {
        let shown = random_descendant(&hierarchy, scene, &mut rng);
        let (tags, classes) = sampler.finish_tags(vec![shown], &mut rng);
        sampler.activations(&classes, &mut values[i * cfg.neurons..(i + 1) * cfg.neurons], &mut rng);
        let name = format!("img_{i:0width$}");
        annotations.push(ImageAnnotation::new(name.clone(), tags));
        names.push(name);
    }
    let activations = ActivationMatrix::new(names, cfg.neurons, values)?;
    let ground_truth = planted
        .iter()
        .map(|&(n, c)| (n, hierarchy.name(c).to_string()))
        .collect();
    Ok(SyntheticBundle {
        config: cfg.clone(),
        hierarchy,
        annotations,
        activations,
        ground_truth,
        planted,
    })
}

impl SyntheticBundle {
    /// Planted neuron -> class id.
    pub fn planted(&self) -> &[(usize, ClassId)] {
        &self.planted
    }

    /// Rebuilds the planted map after the bundle was read back from disk.
    pub fn from_parts(
        config: SyntheticConfig,
        hierarchy: ClassHierarchy,
        annotations: Vec<ImageAnnotation>,
        activations: ActivationMatrix,
        ground_truth: BTreeMap<usize, String>,
    ) -> Result<Self> {
        let planted = ground_truth
            .iter()
            .map(|(&n, name)| {
                hierarchy
                    .class_id(name)
                    .map(|c| (n, c))
                    .ok_or_else(|| Error::UnknownClass(name.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(SyntheticBundle {
            config,
            hierarchy,
            annotations,
            activations,
            ground_truth,
            planted,
        })
    }
}

/// Parameters of the simulated image search used for confirmation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub per_label: usize,
    /// Share of retrieved images that do not show the searched concept.
    pub miss_rate: f64,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            per_label: 100,
            miss_rate: 0.1,
            seed: 0,
        }
    }
}

/// Stand-in for searching images by label: each label gets `per_label` new
/// images showing a descendant of every conjunct (or, on a miss, a random
/// class), activated by the bundle's planted rule.
pub fn simulate_retrieval(
    bundle: &SyntheticBundle,
    labels: &[String],
    rc: &RetrievalConfig,
) -> Result<(ActivationMatrix, ImageSetManifest)> {
    if rc.per_label == 0 {
        return Err(Error::InvalidConfig("per_label must be positive".into()));
    }
    check_rate("miss_rate", rc.miss_rate)?;
    let h = &bundle.hierarchy;
    let unique: BTreeSet<String> = labels.iter().map(|l| canonical_label(l)).collect();
    let exprs = unique
        .iter()
        .map(|l| ClassExpression::parse(l, h).map(|e| (l.clone(), e)))
        .collect::<Result<Vec<_>>>()?;
    let sampler = Sampler::new(&bundle.config, h, &bundle.planted)?;
    let mut rng = rng_for(rc.seed, 4);
    let neurons = bundle.config.neurons;
    let lw = index_width(exprs.len());
    let iw = index_width(rc.per_label);
    let mut names = Vec::with_capacity(exprs.len() * rc.per_label);
    let mut values = Vec::with_capacity(exprs.len() * rc.per_label * neurons);
    let mut manifest = ImageSetManifest::new();
    for (li, (label, expr)) in exprs.iter().enumerate() {
        let mut own = Vec::with_capacity(rc.per_label);
        for k in 0..rc.per_label {
            let shown = if rng.gen_bool(rc.miss_rate) {
                vec![random_class(h, &mut rng)]
            } else {
                expr.conjuncts()
                    .iter()
                    .map(|&c| random_descendant(h, c, &mut rng))
                    .collect()
            };
            let (_, classes) = sampler.finish_tags(shown, &mut rng);
            let mut row = vec![0.0; neurons];
            sampler.activations(&classes, &mut row, &mut rng);
            values.extend_from_slice(&row);
            let name = format!("retrieved_{li:0lw$}_{k:0iw$}");
            own.push(name.clone());
            names.push(name);
        }
        manifest.insert(label, own);
    }
    Ok((ActivationMatrix::new(names, neurons, values)?, manifest))
}

/// Outcome for one planted neuron.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRecord {
    pub neuron: usize,
    pub planted: String,
    pub top_label: Option<String>,
    /// The planted class is subsumed by every conjunct of the top label.
    pub recovered: bool,
    pub confirmed: Option<bool>,
    pub p_one_sided: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub planted: usize,
    pub recovered: usize,
    pub confirmed: usize,
    /// Confirmed planted labels whose one-sided p is below 0.05.
    pub significant: usize,
    pub recovery_rate: f64,
    pub confirmation_rate: f64,
    pub significance_rate: f64,
    /// Neurons outside the ground truth that still received a label.
    pub unplanted_labeled: usize,
    pub records: Vec<RecoveryRecord>,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores pipeline output against the bundle's ground truth.
pub fn recovery_report(
    bundle: &SyntheticBundle,
    records: &[NeuronLabelRecord],
    confirmations: &[ConfirmationRecord],
    evaluations: &[EvaluationRecord],
) -> RecoveryReport {
    let h = &bundle.hierarchy;
    let by_neuron: BTreeMap<usize, &NeuronLabelRecord> = records.iter().map(|r| (r.neuron, r)).collect();
    let conf: BTreeMap<usize, bool> = confirmations.iter().map(|c| (c.neuron, c.confirmed)).collect();
    let eval: BTreeMap<usize, f64> = evaluations.iter().map(|e| (e.neuron, e.mwu.p_one_sided)).collect();
    let mut out = Vec::with_capacity(bundle.planted.len());
    for &(neuron, class) in &bundle.planted {
        let top = by_neuron.get(&neuron).and_then(|r| r.top());
        let recovered = top.is_some_and(|t| t.expression.conjuncts().iter().all(|&c| h.subsumes_unchecked(c, class)));
        out.push(RecoveryRecord {
            neuron,
            planted: h.name(class).to_string(),
            top_label: top.map(|t| t.expression.label(h)),
            recovered,
            confirmed: conf.get(&neuron).copied(),
            p_one_sided: eval.get(&neuron).copied(),
        });
    }
    let planted_set: BTreeSet<usize> = bundle.planted.iter().map(|p| p.0).collect();
    let unplanted_labeled = records
        .iter()
        .filter(|r| !r.skipped && !planted_set.contains(&r.neuron))
        .count();
    let recovered = out.iter().filter(|r| r.recovered).count();
    let confirmed = out.iter().filter(|r| r.confirmed == Some(true)).count();
    let significant = out
        .iter()
        .filter(|r| r.confirmed == Some(true) && r.p_one_sided.is_some_and(|p| p < 0.05))
        .count();
    RecoveryReport {
        planted: out.len(),
        recovered,
        confirmed,
        significant,
        recovery_rate: rate(recovered, out.len()),
        confirmation_rate: rate(confirmed, out.len()),
        significance_rate: rate(significant, confirmed),
        unplanted_labeled,
        records: out,
    }
}
