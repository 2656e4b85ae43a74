// Scratch: print the shaping vectors each experiment seed will see.
use zsc_core::rng::substream;
use zsc_core::shaping::{lhs_select, random_select};

fn main() {
    for seed in 0..5u64 {
        let grid = lhs_select(4, substream(seed, "exp/grid", 0)).unwrap();
        let partners = random_select(5, substream(seed, "exp/partners", 0)).unwrap();
        println!("seed {seed} grid:");
        for s in &grid.shapings {
            println!("  {:?}", s.0.map(|v| (v * 100.0).round() / 100.0));
        }
        println!("seed {seed} partners:");
        for s in &partners.shapings {
            println!("  {:?}", s.0.map(|v| (v * 100.0).round() / 100.0));
        }
    }
}
