// Scratch harness: plain self-play training probe for hyperparameter sweeps.
use std::env;
use std::sync::Arc;
use std::time::Instant;

use zsc_core::env::{Layout, HORIZON};
use zsc_core::marl::{collect_rollouts, train_partner, TrajeDiConfig};
use zsc_core::shaping::ShapingVector;

fn arg<T: std::str::FromStr>(n: usize, default: T) -> T {
    env::args().nth(n).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let budget: usize = arg(1, 400_000);
    let epochs: usize = arg(2, 6);
    let lr: f64 = arg(3, 1e-3);
    let seed: u64 = arg(4, 0);
    // Either one ramp knob (arg 5) or six explicit weights (args 5-10).
    let w: f64 = arg(5, 10.0);
    let shaping = if env::args().nth(6).is_some() {
        ShapingVector([w, arg(6, 0.0), arg(7, 0.0), arg(8, 0.0), arg(9, 0.0), arg(10, 0.0)])
    } else {
        ShapingVector([w, 3.0 + (w - 3.0) * 2.0 / 7.0, 5.0 + (w - 3.0) * 5.0 / 7.0, 0.0, 0.0, 0.0])
    };

    let layout = Arc::new(Layout::bundled("random3-mini").unwrap());
    let cfg = TrajeDiConfig {
        total_timesteps: budget,
        epochs,
        learning_rate: lr,
        seed,
        ..TrajeDiConfig::default()
    };

    let start = Instant::now();
    let policy = train_partner(&shaping, &layout, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();

    // 10 fixed eval episodes at the full horizon, sampled actions.
    let mut sparse = 0.0;
    let mut ev = [0.0f64; 6];
    for ep in 0..10u64 {
        let batch = collect_rollouts(
            [&policy, &policy],
            &layout,
            &shaping,
            HORIZON,
            HORIZON,
            9000 + ep,
        );
        for step in &batch.steps {
            sparse += step.sparse;
            let f = step.features.team_sum();
            for k in 0..6 {
                ev[k] += f[k];
            }
        }
    }
    println!(
        "budget {budget} ep {epochs} lr {lr} seed {seed} shaping {:?} | {secs:.0}s | sparse/ep {:.1} place {:.1} dish {:.1} soup {:.1} d3 {:.0} d4 {:.0} d5 {:.0}",
        shaping.0,
        sparse / 10.0,
        ev[0] / 10.0,
        ev[1] / 10.0,
        ev[2] / 10.0,
        ev[3] / 10.0,
        ev[4] / 10.0,
        ev[5] / 10.0
    );
}
