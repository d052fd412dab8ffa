//! Compiled policy predicates against the tree interpreter.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zksense::policy::{
    compile_tree, decide, to_fixed, validate_action_json, Context, Decision, Node, PolicyTree, Predicate, CONF_SCALE,
};

fn random_node(rng: &mut ChaCha8Rng, depth: usize, k: usize, n_flags: usize) -> Node {
    if depth == 0 || rng.random_bool(0.25) {
        let d = [Decision::Allow, Decision::Deny, Decision::Alarm][rng.random_range(0..3)];
        return Node::leaf(d, &[["idle", "activity", "armed", "night"][rng.random_range(0..4)]]);
    }
    let p = match rng.random_range(0..3) {
        0 => Predicate::ClassEq { class: rng.random_range(0..k) },
        1 => Predicate::ConfidenceGe { threshold_fp: rng.random_range(0..=CONF_SCALE) },
        _ => Predicate::FlagEq { flag: rng.random_range(0..n_flags), value: rng.random_bool(0.5) },
    };
    Node::split(p, random_node(rng, depth - 1, k, n_flags), random_node(rng, depth - 1, k, n_flags))
}

fn random_tree(seed: u64) -> PolicyTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..7);
    let n_flags = rng.random_range(1..4);
    PolicyTree::new(random_node(&mut rng, 6, k, n_flags), k, n_flags).unwrap()
}

fn logits_for(rng: &mut ChaCha8Rng, k: usize) -> Vec<i32> {
    // narrow range so ties (broken toward the lowest index) are frequent
    (0..k).map(|_| rng.random_range(-3..4)).collect()
}

#[test]
fn compiled_agrees_with_interpreter_on_ten_thousand_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut disagreements = 0;
    let mut abstains = 0;
    for i in 0..10_000u64 {
        let tree = random_tree(i / 100);
        let compiled = compile_tree(&tree).unwrap();
        let logits = logits_for(&mut rng, tree.n_classes);
        let u_q = rng.random_range(0..=CONF_SCALE);
        let tau_fp = rng.random_range(0..=CONF_SCALE);
        let ctx = Context {
            zone: "A".into(),
            target: "occupant".into(),
            flags: (0..tree.n_flags).map(|_| rng.random_bool(0.5)).collect(),
        };
        let native = decide(&logits, u_q, tau_fp, &ctx, &tree).unwrap();
        let class = zksense::policy::argmax(&logits);
        let compiled_d = compiled.evaluate(class, u_q, tau_fp, &ctx.flags);
        disagreements += usize::from(compiled_d != Some(native.decision));
        abstains += usize::from(native.decision == Decision::Abstain);
        // exactly one leaf conjunction holds
        let holding = compiled
            .leaves
            .iter()
            .filter(|l| l.comparisons.iter().all(|c| c.holds(class, u_q, &ctx.flags)))
            .count();
        assert_eq!(holding, 1);
    }
    assert_eq!(disagreements, 0);
    assert!(abstains > 1000 && abstains < 9000);
}

#[test]
fn leaves_cover_every_class_confidence_and_flag_combination() {
    for seed in 0..50 {
        let tree = random_tree(10_000 + seed);
        let compiled = compile_tree(&tree).unwrap();
        for class in 0..tree.n_classes {
            for u_q in 0..=CONF_SCALE {
                for bits in 0..(1u32 << tree.n_flags) {
                    let flags: Vec<bool> = (0..tree.n_flags).map(|f| bits >> f & 1 == 1).collect();
                    let i = compiled.leaf_index(class, u_q, &flags).expect("covered");
                    assert_eq!(compiled.leaves[i].decision, tree.walk(class, u_q, &flags).0);
                }
            }
        }
    }
}

#[test]
fn threshold_round_trip_is_exact_on_the_grid() {
    for v in 0..=CONF_SCALE {
        assert_eq!(to_fixed(v as f64 / CONF_SCALE as f64).unwrap(), v);
    }
    assert!(to_fixed(1.01).is_err());
    assert!(to_fixed(-0.1).is_err());
}

proptest! {
    #[test]
    fn below_threshold_always_abstains(
        seed in 0u64..500,
        tau in 1u32..=CONF_SCALE,
        frac in 0.0f64..1.0,
        flags in prop::collection::vec(any::<bool>(), 3),
        logits in prop::collection::vec(-1000i32..1000, 6),
    ) {
        let tree = random_tree(seed);
        let u_q = ((tau as f64) * frac) as u32;
        prop_assume!(u_q < tau);
        let ctx = Context { zone: "B".into(), target: "t".into(), flags: flags[..tree.n_flags].to_vec() };
        let r = decide(&logits[..tree.n_classes], u_q, tau, &ctx, &tree).unwrap();
        prop_assert_eq!(r.decision, Decision::Abstain);
        prop_assert_eq!(compile_tree(&tree).unwrap().evaluate(0, u_q, tau, &ctx.flags), Some(Decision::Abstain));
        prop_assert!(validate_action_json(&r.to_canonical_json()));
    }

    #[test]
    fn at_or_above_threshold_never_abstains(
        seed in 0u64..500,
        tau in 0u32..=CONF_SCALE,
        u in 0u32..=CONF_SCALE,
        logits in prop::collection::vec(-1000i32..1000, 6),
    ) {
        prop_assume!(u >= tau);
        let tree = random_tree(seed);
        let ctx = Context { zone: "C".into(), target: "t".into(), flags: vec![true; tree.n_flags] };
        let r = decide(&logits[..tree.n_classes], u, tau, &ctx, &tree).unwrap();
        prop_assert_ne!(r.decision, Decision::Abstain);
        prop_assert_eq!(r.confidence, u as f64 / CONF_SCALE as f64);
    }

    #[test]
    fn tree_hash_tracks_content(seed in 0u64..500) {
        let a = random_tree(seed);
        let b = random_tree(seed);
        prop_assert_eq!(a.tree_hash(), b.tree_hash());
        let c = PolicyTree { n_flags: a.n_flags + 1, ..a.clone() };
        prop_assert_ne!(a.tree_hash(), c.tree_hash());
    }
}
