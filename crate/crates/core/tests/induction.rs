mod common;

use neurolabel::induction::rank_order;
use neurolabel::{coverage, induce, ClassExpression, ClassId, ExampleSets, InductionConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{closure, image_ids, random_raw_kb, raw_conjuncts, RawKb};

fn raw_kb(seed: u64) -> (RawKb, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_raw_kb(&mut rng, 30, 40, 8), rng)
}

fn id(kb: &neurolabel::KnowledgeBase, raw: &RawKb, i: usize) -> ClassId {
    kb.hierarchy().class_id(&raw.names[i]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conjunction_extension_is_intersection(seed in any::<u64>()) {
        let (raw, _) = raw_kb(seed);
        let anc = closure(&raw.parents);
        let kb = raw.build();
        let n = raw.names.len();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let pair = ClassExpression::new(vec![id(&kb, &raw, a), id(&kb, &raw, b)]).unwrap();
                for j in 0..raw.images.len() {
                    let img = image_ids(&kb, &[j])[0];
                    let both = kb.satisfies(img, &pair).unwrap();
                    let each = kb.satisfies(img, &ClassExpression::atom(id(&kb, &raw, a))).unwrap()
                        && kb.satisfies(img, &ClassExpression::atom(id(&kb, &raw, b))).unwrap();
                    prop_assert_eq!(both, each);
                    prop_assert_eq!(both, raw.instance(&anc, j, &[a, b]));
                }
            }
        }
    }

    #[test]
    fn membership_is_monotone_in_the_hierarchy(seed in any::<u64>()) {
        let (raw, _) = raw_kb(seed);
        let anc = closure(&raw.parents);
        let kb = raw.build();
        for j in 0..raw.images.len() {
            let img = image_ids(&kb, &[j])[0];
            for (c, row) in anc.iter().enumerate() {
                if !kb.satisfies(img, &ClassExpression::atom(id(&kb, &raw, c))).unwrap() {
                    continue;
                }
                for (a, &is_anc) in row.iter().enumerate() {
                    if is_anc {
                        prop_assert!(kb.satisfies(img, &ClassExpression::atom(id(&kb, &raw, a))).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn beam_covering_all_atoms_finds_the_optimum(seed in any::<u64>()) {
        let (raw, mut rng) = raw_kb(seed);
        let anc = closure(&raw.parents);
        let kb = raw.build();
        let (pos, neg) = raw.random_split(&mut rng);
        let ex = ExampleSets::new(image_ids(&kb, &pos), image_ids(&kb, &neg)).unwrap();
        let cfg = InductionConfig { max_conjuncts: 2, beam_width: raw.names.len(), top_k: 1 };
        let top = induce(&kb, &ex, &cfg).unwrap();
        prop_assert_eq!(top.first().map(|h| h.z1_count + h.z2_count), raw.exhaustive_best(&anc, &pos, &neg));
    }

    #[test]
    fn ranked_output_is_sorted_and_covers_positives(seed in any::<u64>()) {
        let (raw, mut rng) = raw_kb(seed);
        let kb = raw.build();
        let (pos, neg) = raw.random_split(&mut rng);
        let ex = ExampleSets::new(image_ids(&kb, &pos), image_ids(&kb, &neg)).unwrap();
        let cfg = InductionConfig { max_conjuncts: 2, beam_width: 8, top_k: 20 };
        let hyps = induce(&kb, &ex, &cfg).unwrap();
        for w in hyps.windows(2) {
            prop_assert_ne!(rank_order(kb.hierarchy(), &w[0], &w[1]), std::cmp::Ordering::Greater);
        }
        for h in &hyps {
            prop_assert!(h.z1_count >= 1);
            prop_assert!(h.z1_count <= pos.len() && h.z2_count <= neg.len());
            prop_assert_eq!(h, &coverage(&kb, &h.expression, &ex).unwrap());
        }
        prop_assert_eq!(induce(&kb, &ex, &cfg).unwrap(), hyps);
    }

    #[test]
    fn adding_a_conjunct_never_helps_z1_or_hurts_z2(seed in any::<u64>()) {
        let (raw, mut rng) = raw_kb(seed);
        let anc = closure(&raw.parents);
        let kb = raw.build();
        let index = raw.index_of(&kb);
        let (pos, neg) = raw.random_split(&mut rng);
        let ex = ExampleSets::new(image_ids(&kb, &pos), image_ids(&kb, &neg)).unwrap();
        for a in 0..raw.names.len() {
            let atom = ClassExpression::atom(id(&kb, &raw, a));
            let base = coverage(&kb, &atom, &ex).unwrap();
            for b in 0..raw.names.len() {
                if a == b {
                    continue;
                }
                let pair = ClassExpression::new(vec![id(&kb, &raw, a), id(&kb, &raw, b)]).unwrap();
                let joined = coverage(&kb, &pair, &ex).unwrap();
                prop_assert!(joined.z1_count <= base.z1_count);
                prop_assert!(joined.z2_count >= base.z2_count);
                let conj = raw_conjuncts(&kb, &index, &pair);
                prop_assert_eq!((joined.z1_count, joined.z2_count), raw.counts(&anc, &conj, &pos, &neg));
            }
        }
    }
}

#[test]
fn no_positive_types_gives_no_hypotheses() {
    let raw = RawKb {
        names: vec!["class_00".into(), "class_01".into()],
        parents: vec![vec![], vec![0]],
        images: vec![vec![], vec![1]],
    };
    let kb = raw.build();
    let ex = ExampleSets::new(image_ids(&kb, &[0]), image_ids(&kb, &[1])).unwrap();
    assert!(induce(&kb, &ex, &InductionConfig::default()).unwrap().is_empty());
}
