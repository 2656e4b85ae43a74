//! Cross-module invariants checked over generated inputs.

use std::sync::Arc;

use proptest::prelude::*;
use zsc_core::env::BUNDLED_LAYOUTS;
use zsc_core::{
    densify, ensemble_action, jsd_of_distributions, lhs_select, random_select, step, Action,
    Checkpoint, EnsemblePolicy, Layout, PolicyParams, Role, ShapingVector, NUM_ACTIONS,
    NUM_FEATURES, OBS_DIM, POLICY_INPUT_DIM,
};

fn weight_box(p: usize) -> impl Strategy<Value = Vec<[f64; NUM_FEATURES]>> {
    prop::collection::vec(proptest::array::uniform6(0f64..=10.0), p..=p)
}

fn features() -> impl Strategy<Value = zsc_core::ShapingFeatures> {
    proptest::array::uniform2(proptest::array::uniform6(0f64..4.0))
        .prop_map(zsc_core::ShapingFeatures)
}

proptest! {
    #[test]
    fn selection_stays_in_the_weight_box(p in 1usize..24, seed in any::<u64>()) {
        for set in [random_select(p, seed).unwrap(), lhs_select(p, seed).unwrap()] {
            prop_assert_eq!(set.shapings.len(), p);
            for shaping in &set.shapings {
                for &w in &shaping.0 {
                    prop_assert!((0.0..=10.0).contains(&w), "weight {w} escaped the box");
                }
            }
        }
    }

    #[test]
    fn lhs_marginals_are_stratified(p in 1usize..24, seed in any::<u64>()) {
        let set = lhs_select(p, seed).unwrap();
        for feature in 0..NUM_FEATURES {
            let mut column: Vec<f64> = set.shapings.iter().map(|s| s.0[feature]).collect();
            column.sort_by(f64::total_cmp);
            for (i, w) in column.iter().enumerate() {
                let lo = 10.0 * i as f64 / p as f64;
                let hi = 10.0 * (i + 1) as f64 / p as f64;
                prop_assert!(
                    (lo..=hi).contains(w),
                    "feature {feature}: sorted sample {i} = {w} outside stratum [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn densify_is_linear_in_weights(
        sparse in 0f64..40.0,
        feats in features(),
        w1 in weight_box(1),
        w2 in weight_box(1),
    ) {
        let (w1, w2) = (ShapingVector(w1[0]), ShapingVector(w2[0]));
        let mut sum = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            sum[i] = w1.0[i] + w2.0[i];
        }
        let lhs = densify(sparse, &feats, &ShapingVector(sum)) + sparse;
        let rhs = densify(sparse, &feats, &w1) + densify(sparse, &feats, &w2);
        prop_assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} != rhs {rhs}");
        prop_assert_eq!(densify(sparse, &feats, &ShapingVector::zeros()), sparse);
    }

    #[test]
    fn mode_vote_ignores_component_order(
        seeds in prop::collection::vec(any::<u64>(), 1..6),
        obs in prop::collection::vec(-1f64..1.0, POLICY_INPUT_DIM..=POLICY_INPUT_DIM),
        rotate in 0usize..6,
    ) {
        let shaping = ShapingVector::zeros();
        let build = |order: Vec<u64>| {
            let components = order
                .into_iter()
                .enumerate()
                .map(|(i, s)| {
                    PolicyParams::init(POLICY_INPUT_DIM, 8, shaping, s, Role::PopulationMember(i))
                })
                .collect();
            EnsemblePolicy::new(components).unwrap()
        };
        let baseline = ensemble_action(&build(seeds.clone()), &obs).unwrap();
        prop_assert!(baseline < NUM_ACTIONS);

        let mut reversed = seeds.clone();
        reversed.reverse();
        prop_assert_eq!(ensemble_action(&build(reversed), &obs).unwrap(), baseline);

        let mut rotated = seeds.clone();
        rotated.rotate_left(rotate % seeds.len().max(1));
        prop_assert_eq!(ensemble_action(&build(rotated), &obs).unwrap(), baseline);
    }

    #[test]
    fn episodes_replay_bitwise_identically(
        layout_index in 0usize..3,
        seed in any::<u64>(),
        moves in prop::collection::vec((0usize..NUM_ACTIONS, 0usize..NUM_ACTIONS), 1..40),
    ) {
        let layout = Arc::new(Layout::bundled(BUNDLED_LAYOUTS[layout_index]).unwrap());
        let run = || {
            let mut state = zsc_core::reset(&layout, seed);
            let mut trace: Vec<(u64, u64, Vec<u64>)> = Vec::new();
            for &(a, b) in &moves {
                let actions = [Action::from_index(a).unwrap(), Action::from_index(b).unwrap()];
                let out = step(&state, actions).unwrap();
                let team = out.features.team_sum();
                for (agent_feats, obs_agent) in out.features.0.iter().zip(0usize..2) {
                    for &f in agent_feats {
                        prop_assert!(f.is_finite() && f >= 0.0, "feature {f} out of range");
                    }
                    let obs = zsc_core::observe(&out.next_state, obs_agent);
                    prop_assert_eq!(obs.len(), OBS_DIM);
                    prop_assert!(obs.iter().all(|v| v.is_finite()));
                }
                prop_assert!(out.sparse_reward >= 0.0);
                trace.push((
                    out.sparse_reward.to_bits(),
                    u64::from(out.done),
                    team.iter().map(|f| f.to_bits()).collect(),
                ));
                if out.done {
                    break;
                }
                state = out.next_state;
            }
            Ok(trace)
        };
        prop_assert_eq!(run()?, run()?);
    }

    #[test]
    fn checkpoint_text_round_trips_field_for_field(
        kind in "[a-z]{1,8}",
        fields in prop::collection::vec(("[a-z_]{1,8}", "[a-zA-Z0-9._:-]{1,12}"), 0..6),
        params in prop::collection::vec(
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            0..64,
        ),
    ) {
        let mut ckpt = Checkpoint::new(&kind);
        for (key, value) in &fields {
            ckpt.push_field(key, value);
        }
        ckpt.params = params;
        let back = Checkpoint::from_text(&ckpt.to_text()).unwrap();
        prop_assert_eq!(&back.kind, &ckpt.kind);
        prop_assert_eq!(&back.fields, &ckpt.fields);
        prop_assert_eq!(back.params.len(), ckpt.params.len());
        for (a, b) in back.params.iter().zip(&ckpt.params) {
            prop_assert_eq!(a.to_bits(), b.to_bits(), "param {} lost precision vs {}", a, b);
        }
    }

    #[test]
    fn jsd_respects_its_bounds(
        raw in prop::collection::vec(
            prop::collection::vec(1e-6f64..1.0, NUM_ACTIONS..=NUM_ACTIONS),
            2..6,
        ),
    ) {
        let dists: Vec<Vec<f64>> = raw
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                row.iter().map(|v| v / total).collect()
            })
            .collect();
        let jsd = jsd_of_distributions(&dists);
        prop_assert!(jsd >= 0.0);
        prop_assert!(jsd <= (dists.len() as f64).ln() + 1e-12, "jsd {jsd} above ln n");

        let mut reversed = dists.clone();
        reversed.reverse();
        prop_assert!((jsd_of_distributions(&reversed) - jsd).abs() < 1e-12);

        let clones: Vec<Vec<f64>> = vec![dists[0].clone(); dists.len()];
        prop_assert!(jsd_of_distributions(&clones).abs() < 1e-12);
    }

    #[test]
    fn shaping_vectors_survive_json_bit_for_bit(bits in [any::<u32>(); NUM_FEATURES]) {
        // Dense dyadic fractions of 10 exercise the float writer harder than
        // round decimals do.
        let mut weights = [0.0; NUM_FEATURES];
        for (w, b) in weights.iter_mut().zip(bits) {
            *w = 10.0 * f64::from(b) / f64::from(u32::MAX);
        }
        let vector = ShapingVector(weights);
        let json = serde_json::to_string(&vector).unwrap();
        let back: ShapingVector = serde_json::from_str(&json).unwrap();
        for (a, b) in back.0.iter().zip(&vector.0) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
