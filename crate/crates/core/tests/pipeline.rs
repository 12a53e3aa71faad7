mod common;

use std::collections::BTreeSet;

use neurolabel::build_kb;
use neurolabel::concept_activation::{kfold_pvalue, ClassifierConfig, ClassifierKind, ConceptDataset};
use neurolabel::knowledge_base::canonical_label;
use neurolabel::pipeline::{run_pipeline, PipelineConfig, PipelineResult, Retrieved};
use neurolabel::synthetic::{
    generate, recovery_report, simulate_retrieval, PlantedMap, RetrievalConfig, SyntheticBundle, SyntheticConfig,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn run(bundle: &SyntheticBundle, cfg: &PipelineConfig) -> PipelineResult {
    let kb = build_kb(bundle.hierarchy.clone(), &bundle.annotations, 2).unwrap();
    run_pipeline(
        &kb,
        &bundle.activations,
        |labels| {
            let (activations, manifest) = simulate_retrieval(bundle, labels, &RetrievalConfig::default())?;
            Ok(Retrieved { activations, manifest })
        },
        cfg,
    )
    .unwrap()
}

#[test]
fn noiseless_top_label_is_planted_class_or_ancestor() {
    for seed in 0..4 {
        let cfg = SyntheticConfig {
            distractor_tag_rate: 0.0,
            noise_sigma: 0.0,
            rng_seed: seed,
            ..SyntheticConfig::default()
        };
        let bundle = generate(&cfg).unwrap();
        let h = &bundle.hierarchy;
        let parents: Vec<Vec<usize>> = h
            .classes()
            .map(|c| h.parents(c).iter().map(|p| p.0 as usize).collect())
            .collect();
        let anc = common::closure(&parents);
        let pcfg = PipelineConfig {
            concept_analysis: false,
            ..PipelineConfig::default()
        };
        let res = run(&bundle, &pcfg);
        for &(neuron, planted) in bundle.planted() {
            let top = res.records[neuron].top().expect("planted neuron has a label");
            for &c in top.expression.conjuncts() {
                assert!(
                    anc[planted.0 as usize][c.0 as usize],
                    "seed {seed} neuron {neuron}: {} is not above {}",
                    h.name(c),
                    h.name(planted)
                );
            }
        }
        let rep = recovery_report(&bundle, &res.records, &res.confirmations, &res.evaluations);
        assert_eq!(rep.recovered, rep.planted);
    }
}

#[test]
fn stage_outputs_are_consistent() {
    let bundle = generate(&SyntheticConfig {
        planted: PlantedMap::Auto { active_neurons: 30 },
        rng_seed: 9,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let res = run(&bundle, &PipelineConfig::default());

    let skipped: BTreeSet<usize> = res.records.iter().filter(|r| r.skipped).map(|r| r.neuron).collect();
    assert_eq!(skipped.len(), 64 - 30);
    for r in &res.records {
        assert_eq!(r.skipped, r.hypotheses.is_empty());
    }
    for c in &res.confirmations {
        assert!(!skipped.contains(&c.neuron));
        assert!((0.0..=100.0).contains(&c.target_pct));
        assert_eq!(c.confirmed, c.target_pct >= 80.0);
    }
    let confirmed: BTreeSet<usize> = res
        .confirmations
        .iter()
        .filter(|c| c.confirmed)
        .map(|c| c.neuron)
        .collect();
    for e in &res.evaluations {
        assert!(confirmed.contains(&e.neuron));
    }
    let labels: BTreeSet<String> = res.targets.iter().map(|t| t.label.clone()).collect();
    let retrieved: BTreeSet<String> = res.retrieved.manifest.iter().map(|(k, _)| k.to_string()).collect();
    assert_eq!(retrieved, labels.iter().map(|l| canonical_label(l)).collect());
    for (label, imgs) in res.retrieved.manifest.iter() {
        let a = res.confirm_manifest.get(label).unwrap();
        assert_eq!(a.len(), imgs.len() * 4 / 5);
    }
    assert_eq!(res.summary.confirmed, confirmed.len());
    assert_eq!(res.concept_accuracies.len(), 2 * labels.len());
    assert!(res.concept_summary.is_some());
}

#[test]
fn labels_do_not_depend_on_thread_count() {
    let bundle = generate(&SyntheticConfig::default()).unwrap();
    let cfg = PipelineConfig {
        concept_analysis: false,
        ..PipelineConfig::default()
    };
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run(&bundle, &cfg));
    let many = rayon::ThreadPoolBuilder::new()
        .num_threads(6)
        .build()
        .unwrap()
        .install(|| run(&bundle, &cfg));
    assert_eq!(one.records, many.records);
    assert_eq!(one.confirmations, many.confirmations);
}

/// Under shuffled labels the permutation p-value must be calibrated. Its null
/// mean is about 0.5 and its standard error over 200 trials about 0.02, so a
/// mean below 0.45 flags an anti-conservative test. About 5 % of the trials may
/// fall below 0.05; 18 is 2.6 standard deviations above that.
#[test]
fn permutation_p_is_calibrated_under_the_null() {
    for kind in [ClassifierKind::Linear, ClassifierKind::Kernel] {
        let ps: Vec<f64> = (0..200u64)
            .into_par_iter()
            .map(|trial| {
                let ds = common::clouds(15, 4, 1.0, 500 + trial);
                let mut labels = ds.labels().to_vec();
                labels.shuffle(&mut ChaCha8Rng::seed_from_u64(trial));
                let ds = ConceptDataset::new("null", ds.rows().to_owned(), labels).unwrap();
                let cfg = ClassifierConfig {
                    permutations: 199,
                    seed: trial,
                    ..ClassifierConfig::default()
                };
                kfold_pvalue(&ds, kind, &cfg).unwrap()
            })
            .collect();
        let small = ps.iter().filter(|&&p| p < 0.05).count();
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        assert!(small <= 18, "{kind}: {small}/200 null p-values below 0.05");
        assert!(mean >= 0.45, "{kind}: mean null p-value {mean:.3}");
    }
}
