//! Microbenchmarks for the paths that dominate training and evaluation time.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use zsc_core::marl::build_samples;
use zsc_core::surrogate::{init_mlp, train, TrainConfig};
use zsc_core::{
    collect_rollouts, jsd_of_distributions, lhs_select, observe, random_select, reset, step,
    Action, Layout, PolicyParams, Role, ShapingVector, TrajeDiConfig, POLICY_INPUT_DIM,
};

fn bench_env(c: &mut Criterion) {
    let layout = Arc::new(Layout::bundled("random3-mini").unwrap());
    let state = reset(&layout, 7);
    let actions = [Action::from_index(2).unwrap(), Action::from_index(4).unwrap()];
    c.bench_function("env_step", |b| {
        b.iter(|| step(black_box(&state), black_box(actions)).unwrap())
    });
    c.bench_function("env_observe", |b| b.iter(|| observe(black_box(&state), 0)));
}

fn bench_policy(c: &mut Criterion) {
    let policy =
        PolicyParams::init(POLICY_INPUT_DIM, 32, ShapingVector::zeros(), 3, Role::Partner);
    let obs: Vec<f64> = (0..POLICY_INPUT_DIM).map(|i| (i as f64 * 0.13).sin()).collect();
    c.bench_function("policy_forward", |b| b.iter(|| policy.action_probs(black_box(&obs))));

    let layout = Arc::new(Layout::bundled("random3-mini").unwrap());
    let shaping = ShapingVector([3.0, 1.0, 1.0, 0.0, 2.0, 0.5]);
    c.bench_function("collect_rollouts_400", |b| {
        b.iter(|| collect_rollouts([&policy, &policy], &layout, &shaping, 400, 400, 11))
    });

    let batch = collect_rollouts([&policy, &policy], &layout, &shaping, 800, 400, 11);
    let cfg = TrajeDiConfig::default();
    c.bench_function("gae_build_samples_800", |b| {
        b.iter(|| build_samples(black_box(&batch), &cfg, zsc_core::marl::SeatFilter::Both, None))
    });
}

fn bench_selection(c: &mut Criterion) {
    c.bench_function("lhs_select_p10", |b| b.iter(|| lhs_select(10, black_box(5)).unwrap()));

    let dists: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let raw: Vec<f64> = (0..6).map(|j| 1.0 + ((i * 6 + j) as f64 * 0.7).sin().abs()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect();
    c.bench_function("jsd_4_dists", |b| b.iter(|| jsd_of_distributions(black_box(&dists))));

    let data: Vec<zsc_core::ResultRecord> = random_select(64, 9)
        .unwrap()
        .shapings
        .iter()
        .enumerate()
        .map(|(i, s)| zsc_core::ResultRecord {
            folder: format!("bench/{i}"),
            pop_num: 0,
            seed: i as u64,
            run_type: "train".to_string(),
            best_reward: 5.0 * s.0[0] + s.0[1],
            shaping: *s,
        })
        .collect();
    let model = init_mlp(1);
    let one_epoch = TrainConfig { epochs: 1, ..TrainConfig::default() };
    c.bench_function("mlp_train_epoch_64", |b| {
        b.iter(|| train(black_box(&model), black_box(&data), &one_epoch).unwrap())
    });
}

criterion_group!(benches, bench_env, bench_policy, bench_selection);
criterion_main!(benches);
