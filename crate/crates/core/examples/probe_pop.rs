// Scratch harness: one full grid/baseline/single experiment seed.
use std::env;
use std::sync::Arc;
use std::time::Instant;

use zsc_core::ensemble::{
    build_baseline_ensemble, ensemble_from_populations, evaluate_method, Actor, EnsemblePolicy,
    MatchSpec,
};
use zsc_core::env::{Layout, HORIZON};
use zsc_core::marl::{selfplay_eval, train_partner, train_population, TrajeDiConfig};
use zsc_core::rng::substream;
use zsc_core::shaping::{lhs_select, random_select, ShapingVector};

fn arg<T: std::str::FromStr>(n: usize, default: T) -> T {
    env::args().nth(n).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let seed: u64 = arg(1, 0);
    let ego_epochs: usize = arg(2, 6);
    let ego_lr: f64 = arg(3, 1e-3);
    let partner_budget: usize = arg(4, 400_000);
    let partner_epochs: usize = arg(5, 6);
    let partner_lr: f64 = arg(6, 1e-3);
    let rollouts: usize = arg(7, 4);
    let alpha: f64 = arg(8, 0.5);

    let layout = Arc::new(Layout::bundled("random3-mini").unwrap());
    let hand = ShapingVector([3.0, 3.0, 5.0, 0.0, 0.0, 0.0]);

    let base_cfg = TrajeDiConfig {
        alpha,
        epochs: ego_epochs,
        learning_rate: ego_lr,
        ..TrajeDiConfig::default()
    };

    let t0 = Instant::now();
    let grid_set = lhs_select(4, substream(seed, "exp/grid", 0)).unwrap();
    let mut grid_pops = Vec::new();
    for (i, shaping) in grid_set.shapings.iter().enumerate() {
        let cfg = TrajeDiConfig {
            seed: substream(seed, "exp/population", i as u64),
            ..base_cfg
        };
        let pop = train_population(shaping, &layout, &cfg).unwrap();
        let (sp, sh) = selfplay_eval(
            &pop.best_response,
            &layout,
            shaping,
            4,
            HORIZON,
            substream(seed, "exp/diag", i as u64),
        );
        println!(
            "  grid pop {i} {:?} br selfplay sparse {sp:.1} shaped {sh:.1}",
            shaping.0
        );
        grid_pops.push(pop);
    }
    let grid_ego = ensemble_from_populations(&grid_pops).unwrap();
    println!("grid populations done in {:.0}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let baseline_cfg = TrajeDiConfig {
        seed: substream(seed, "exp/baseline", 0),
        ..base_cfg
    };
    let (baseline_ego, baseline_pops) =
        build_baseline_ensemble(&hand, 4, &layout, &baseline_cfg).unwrap();
    for (i, pop) in baseline_pops.iter().enumerate() {
        let (sp, sh) = selfplay_eval(
            &pop.best_response,
            &layout,
            &hand,
            4,
            HORIZON,
            substream(seed, "exp/diag-base", i as u64),
        );
        println!("  base pop {i} br selfplay sparse {sp:.1} shaped {sh:.1}");
    }
    let single = EnsemblePolicy::new(vec![baseline_pops[0].best_response.clone()]).unwrap();
    println!("baseline populations done in {:.0}s", t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    let partner_set = random_select(5, substream(seed, "exp/partners", 0)).unwrap();
    let mut partners = Vec::new();
    for (k, shaping) in partner_set.shapings.iter().enumerate() {
        let cfg = TrajeDiConfig {
            total_timesteps: partner_budget,
            epochs: partner_epochs,
            learning_rate: partner_lr,
            seed: substream(seed, "exp/partner-train", k as u64),
            ..TrajeDiConfig::default()
        };
        let partner = train_partner(shaping, &layout, &cfg).unwrap();
        let (sp, sh) = selfplay_eval(
            &partner,
            &layout,
            shaping,
            4,
            HORIZON,
            substream(seed, "exp/diag-partner", k as u64),
        );
        println!(
            "  partner {k} {:?} selfplay sparse {sp:.1} shaped {sh:.1}",
            shaping.0
        );
        partners.push(partner);
    }
    println!("partners done in {:.0}s", t2.elapsed().as_secs_f64());

    let protocol = MatchSpec {
        rollouts,
        seeds: vec![substream(seed, "exp/eval", 0), substream(seed, "exp/eval", 1)],
        horizon: HORIZON,
    };
    let t3 = Instant::now();
    let grid = evaluate_method(&Actor::Vote(&grid_ego), &partners, &layout, &protocol).unwrap();
    let base = evaluate_method(&Actor::Vote(&baseline_ego), &partners, &layout, &protocol).unwrap();
    let sing = evaluate_method(&Actor::Vote(&single), &partners, &layout, &protocol).unwrap();
    println!("eval done in {:.0}s", t3.elapsed().as_secs_f64());

    let ordering = grid.mean_sparse > base.mean_sparse && base.mean_sparse > sing.mean_sparse;
    println!(
        "seed {seed} | grid {:.2} base {:.2} single {:.2} | ordering {} | total {:.0}s",
        grid.mean_sparse,
        base.mean_sparse,
        sing.mean_sparse,
        if ordering { "HOLDS" } else { "FAILS" },
        t0.elapsed().as_secs_f64()
    );
}
